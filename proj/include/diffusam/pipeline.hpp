#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "diffusam/backends.hpp"
#include "diffusam/cues.hpp"
#include "diffusam/geometry.hpp"
#include "diffusam/imaging.hpp"

namespace diffusam {

/// One referring expression to ground. The raster is either supplied in
/// memory or loaded lazily from image_path.
struct GroundingTask {
  std::string task_id;
  std::shared_ptr<const ImageBuffer> image;
  std::filesystem::path image_path;
  std::string query;
  MaybeBox ground_truth;
};

/// How the first segmentation pass is prompted.
///  - cue_boxes: box prompts from the decoded cues, on the enhanced image.
///  - edited_image_text: the red-annotated edit plus the text query.
enum class InitialSegmentMode { cue_boxes, edited_image_text };

std::string_view to_string(InitialSegmentMode m);
InitialSegmentMode initial_segment_mode_from_string(std::string_view s);

inline const std::vector<std::string> kDefaultDirectionalKeywords = {
    "left", "right", "top", "bottom", "upper", "lower", "leftmost", "rightmost"};

inline constexpr std::string_view kDefaultInstructionTemplate =
    "Draw a red bounding box around: {query}. Do not modify anything else.";

struct PipelineConfig {
  double p_threshold = 10.0;  // percent of the image area
  std::vector<std::string> directional_keywords = kDefaultDirectionalKeywords;
  EnhanceParams enhance{};
  RedCueParams cue{};
  int min_mask_pixels = 10;
  double min_mask_score = 0.0;
  double crop_margin = 0.0;
  std::string instruction_template{kDefaultInstructionTemplate};
  InitialSegmentMode initial_segment_mode = InitialSegmentMode::cue_boxes;
  std::map<Role, BackendEndpoint> endpoints;

  /// Throws std::invalid_argument. Endpoints for all four roles are required.
  void validate() const;
};

enum class Provenance { refined_large, refined_small, refined_fallback_alternate, diffusion_fallback, none };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

enum class Route { large, small };

/// One step of the segmenter fallback cascade.
struct FallbackEvent {
  Role failed;
  std::string trigger;  // invalid_mask | transport_error | protocol_error
  std::string next;     // alternate role name or "diffusion_cue"
  std::string detail;
};

struct RoutingDecision {
  BBox crop;
  double area_ratio_percent;
  Role chosen;
};

struct CandidateRecord {
  int cue_index;
  BBox box;
  std::optional<double> score;  // score of the mask that produced the box
  std::string source;           // mask | cue | refined_large | ...
};

struct StageRecord {
  std::string stage;
  std::string inputs_digest{};
  std::vector<CallRecord> calls{};
  std::optional<RoutingDecision> routing{};
  std::vector<FallbackEvent> fallbacks{};
  std::vector<CandidateRecord> candidates{};
  std::string note{};
};

struct PipelineTrace {
  std::vector<StageRecord> stages;

  /// Latencies are wall-clock and are left out unless asked for.
  nlohmann::json to_json(bool include_latency = false) const;
  /// SHA-256 of the latency-free JSON form.
  std::string digest() const;
};

struct GroundingResult {
  std::string task_id;
  MaybeBox final_box;
  Provenance provenance = Provenance::none;
  std::vector<BBox> cue_boxes;
  PipelineTrace trace;
};

/// Raised when a task cannot complete (unreadable image, editor failure).
class TaskError : public std::runtime_error {
 public:
  TaskError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Case-insensitive whole-word removal, whitespace collapsed and trimmed.
std::string strip_directional_keywords(std::string_view query,
                                       const std::vector<std::string>& keywords);

/// large iff the crop covers strictly more than p_threshold percent.
Route select_refiner(const BBox& crop_box, Dims dims, double p_threshold);

/// Highest-scoring mask with at least min_mask_pixels foreground pixels and
/// score >= min_mask_score; ties go to the larger foreground, then the first.
std::optional<BinaryMask> is_valid_mask(const SegmentResponse& resp, int min_mask_pixels,
                                        double min_mask_score);

/// Instruction sent to the image editor for `query`.
std::string render_instruction(std::string_view tmpl, std::string_view query);

/// The grounding state machine; holds one client per role and may be shared
/// across threads.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg);

  const PipelineConfig& config() const { return cfg_; }

  /// Throws TaskError when the task cannot run to completion; segmentation
  /// failures degrade through the fallback cascade instead.
  GroundingResult ground(const GroundingTask& task) const;

 private:
  const BackendClient& client(Role r) const;

  PipelineConfig cfg_;
  std::map<Role, BackendClient> clients_;
};

GroundingResult ground(const GroundingTask& task, const PipelineConfig& cfg);

struct TaskOutcome {
  std::string task_id;
  std::optional<GroundingResult> result;
  std::string error;  // set iff result is empty
  std::string error_stage;

  bool ok() const { return result.has_value(); }
};

/// Runs tasks on a bounded worker pool. Output order follows input order and
/// one task's failure never affects another.
std::vector<TaskOutcome> ground_batch(const std::vector<GroundingTask>& tasks,
                                      const PipelineConfig& cfg, int parallelism);

}  // namespace diffusam

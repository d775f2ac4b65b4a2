#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffusam/cues.hpp"
#include "diffusam/evaluation.hpp"
#include "diffusam/pipeline.hpp"

namespace diffusam {

/// Health of every configured endpoint.
struct HealthReport {
  bool ok = true;
  nlohmann::json snapshot = nlohmann::json::object();
  std::vector<std::string> failures;
};

HealthReport check_endpoints(const PipelineConfig& cfg);

struct GroundRunOptions {
  std::filesystem::path tasks_path;
  std::filesystem::path results_path;
  std::filesystem::path manifest_path;  // defaults to <results>.manifest.json
  std::filesystem::path overlay_dir;    // empty: no overlays
  int parallelism = 1;
};

struct GroundRunSummary {
  std::size_t n_tasks = 0;
  std::size_t n_errors = 0;
  std::map<std::string, std::size_t> by_provenance;
};

/// Grounds every task in a canonical JSONL file and writes result lines
/// (task order) plus a run manifest. Per-task failures become result lines
/// with an "error" field.
GroundRunSummary run_ground(const PipelineConfig& cfg, const GroundRunOptions& opts,
                            const HealthReport* health = nullptr);

ResultLine to_result_line(const TaskOutcome& outcome, const MaybeBox& truth);

/// Cue boxes red, final box green, truth blue.
ImageBuffer legend_overlay(const ImageBuffer& image, const std::vector<BBox>& cues,
                           const MaybeBox& final_box, const MaybeBox& truth);

/// Dimmed image with red-mask pixels in yellow and detected boxes in green.
ImageBuffer cue_debug_overlay(const ImageBuffer& background, const BinaryMask& red_mask,
                              const CueSet& cues);

/// Writes `text` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

/// UTC timestamp, ISO 8601 with seconds.
std::string utc_now_iso8601();

}  // namespace diffusam

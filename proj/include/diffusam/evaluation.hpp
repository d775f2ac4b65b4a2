#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "diffusam/geometry.hpp"

namespace diffusam {

/// One ground-truth referring expression.
struct TaskRecord {
  std::string task_id;
  std::filesystem::path image_path;  // resolved against the task file's directory
  std::string query;
  BBox truth_box;
  std::string dataset_tag;
  bool obb_converted = false;
  std::string warning;  // e.g. image file missing
};

/// Parse failure with the 1-based line number (0 when not line-oriented).
class LoadError : public std::runtime_error {
 public:
  LoadError(const std::string& source, std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Canonical JSONL task format:
///   {"task_id", "image", "query", "bbox": [x0,y0,x1,y1], "dataset", "obb_converted"?}
std::vector<TaskRecord> load_canonical(const std::filesystem::path& path);
nlohmann::json task_record_to_json(const TaskRecord& r, const std::filesystem::path& relative_to = {});
void write_canonical(const std::vector<TaskRecord>& records, const std::filesystem::path& path);

struct AdapterResult {
  std::vector<TaskRecord> records;
  std::vector<std::string> diagnostics;  // rejected lines, unreadable files
};

inline constexpr const char* kNwpuClasses[10] = {
    "airplane", "ship", "storage tank", "baseball diamond", "tennis court",
    "basketball court", "ground track field", "harbor", "bridge", "vehicle"};

/// NWPU-VHR-10 release layout: `ground truth/NNN.txt` with lines
/// "(x1,y1),(x2,y2),class" next to `positive image set/NNN.jpg`. Queries are
/// synthesized as "the <class name>".
AdapterResult adapt_nwpu(const std::filesystem::path& dir);

/// VRSBench-style grounding annotations: a JSON array (or JSONL) of objects
/// with "image_id", "question" and either "obb" (four [x,y] corners) or
/// "bbox" (inclusive [x1,y1,x2,y2]); optional "question_id". Oriented boxes
/// become their enclosing axis-aligned box and are flagged. Throws LoadError
/// naming the missing field on schema mismatch.
AdapterResult adapt_vrsbench(const std::filesystem::path& file,
                             const std::filesystem::path& images_dir = {});

/// Enclosing half-open box of corner points given in pixel coordinates.
BBox enclosing_box(const std::vector<std::pair<double, double>>& corners);

// ---------------------------------------------------------------------------
// Metrics

struct PerTask {
  std::string task_id;
  double iou = 0.0;
  std::string provenance;
};

struct MetricsReport {
  std::size_t n_tasks = 0;
  std::size_t n_scored = 0;
  double miou = 0.0;
  std::vector<std::pair<double, double>> acc_at;  // threshold -> fraction, input order
  std::vector<PerTask> per_task;

  /// Throws std::out_of_range for a threshold that was not evaluated.
  double acc(double threshold) const;
};

struct ScoredPair {
  std::string task_id;
  MaybeBox predicted;  // nullopt scores IoU 0
  BBox truth;
  std::string provenance;
};

inline const std::vector<double> kDefaultThresholds = {0.5, 0.7};

/// mIoU over all pairs ("no box" counts as 0) and Acc@t = fraction with IoU
/// strictly greater than t. Throws std::invalid_argument on an empty pair
/// list or a threshold outside (0,1).
MetricsReport compute_metrics(const std::vector<ScoredPair>& pairs,
                              const std::vector<double>& thresholds = kDefaultThresholds);

/// Sum with a fixed reduction order (ascending values, pairwise), so the
/// result does not depend on input order.
double stable_sum(std::vector<double> values);

// ---------------------------------------------------------------------------
// Result lines

/// {"task_id", "bbox": [..] | null, "provenance", "iou"?, "trace_digest", "error"?}
struct ResultLine {
  std::string task_id;
  MaybeBox bbox;
  std::string provenance = "none";
  std::optional<double> iou;
  std::string trace_digest;
  std::string error;
};

nlohmann::json result_to_json(const ResultLine& r);
ResultLine result_from_json(const nlohmann::json& j);
std::vector<ResultLine> read_results(const std::filesystem::path& path);

/// Thrown when results mention a task id absent from the task file.
class UnknownTaskError : public std::runtime_error {
 public:
  explicit UnknownTaskError(std::string task_id)
      : std::runtime_error("result references unknown task_id '" + task_id + "'"),
        task_id_(std::move(task_id)) {}
  const std::string& task_id() const { return task_id_; }

 private:
  std::string task_id_;
};

/// Scores results against tasks. Every task is counted; tasks without a
/// result line score as "no box". n_scored counts tasks with a prediction.
MetricsReport evaluate(const std::vector<ResultLine>& results, const std::vector<TaskRecord>& tasks,
                       const std::vector<double>& thresholds = kDefaultThresholds);

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { table_text, csv, json, summary };

ReportFormat report_format_from_string(std::string_view s);

struct ReportRow {
  std::string model;
  std::string dataset;
  MetricsReport metrics;
};

/// Table-shaped comparison. Rows keep input order; in the text table the
/// best value of every column carries a '*'. Throws on an empty row list.
std::string render_report(const std::vector<ReportRow>& rows, ReportFormat format);

/// Inverse of the CSV rendering (metric values only).
std::vector<ReportRow> parse_report_csv(const std::string& text);

/// "acc50" for 0.5, "acc70" for 0.7.
std::string acc_column_name(double threshold);

}  // namespace diffusam

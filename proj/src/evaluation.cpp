#include "diffusam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "diffusam/backends.hpp"

namespace diffusam {

namespace fs = std::filesystem;
using nlohmann::json;

LoadError::LoadError(const std::string& source, std::size_t line, const std::string& message)
    : std::runtime_error(line ? source + ":" + std::to_string(line) + ": " + message
                              : source + ": " + message),
      line_(line) {}

namespace {

std::string require_string(const json& j, const char* field) {
  if (!j.contains(field)) throw std::invalid_argument(std::string("missing field '") + field + "'");
  if (!j[field].is_string()) throw std::invalid_argument(std::string("field '") + field + "' must be a string");
  return j[field].get<std::string>();
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string(), 0, "cannot open file");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

std::vector<TaskRecord> load_canonical(const fs::path& path) {
  const auto lines = read_lines(path);
  const fs::path base = path.parent_path();
  std::vector<TaskRecord> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    try {
      const json j = json::parse(lines[i]);
      if (!j.is_object()) throw std::invalid_argument("line is not a JSON object");
      if (!j.contains("bbox")) throw std::invalid_argument("missing field 'bbox'");
      TaskRecord r{.task_id = require_string(j, "task_id"),
                   .image_path = {},
                   .query = require_string(j, "query"),
                   .truth_box = wire::box_from_json(j["bbox"]),
                   .dataset_tag = j.contains("dataset") ? require_string(j, "dataset") : std::string()};
      const fs::path image = require_string(j, "image");
      r.image_path = image.is_absolute() ? image : base / image;
      if (j.contains("obb_converted")) {
        if (!j["obb_converted"].is_boolean()) throw std::invalid_argument("'obb_converted' must be a boolean");
        r.obb_converted = j["obb_converted"].get<bool>();
      }
      if (r.task_id.empty()) throw std::invalid_argument("empty task_id");
      if (r.query.empty()) throw std::invalid_argument("empty query");
      std::error_code ec;
      if (!fs::exists(r.image_path, ec)) r.warning = "image file not found: " + r.image_path.string();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw LoadError(path.string(), i + 1, e.what());
    } catch (const std::invalid_argument& e) {
      throw LoadError(path.string(), i + 1, e.what());
    }
  }
  return out;
}

json task_record_to_json(const TaskRecord& r, const fs::path& relative_to) {
  fs::path image = r.image_path;
  if (!relative_to.empty()) image = image.lexically_relative(relative_to);
  json j = {{"task_id", r.task_id},
            {"image", image.generic_string()},
            {"query", r.query},
            {"bbox", wire::box_to_json(r.truth_box)},
            {"dataset", r.dataset_tag}};
  if (r.obb_converted) j["obb_converted"] = true;
  return j;
}

void write_canonical(const std::vector<TaskRecord>& records, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError(path.string(), 0, "cannot write file");
  const fs::path base = fs::absolute(path).parent_path();
  for (const auto& r : records) {
    TaskRecord abs = r;
    abs.image_path = fs::absolute(r.image_path);
    out << task_record_to_json(abs, base).dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// NWPU-VHR-10

namespace {

fs::path first_existing(const fs::path& dir, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    std::error_code ec;
    if (fs::is_directory(dir / n, ec)) return dir / n;
  }
  return {};
}

}  // namespace

AdapterResult adapt_nwpu(const fs::path& dir) {
  AdapterResult res;
  fs::path gt_dir = first_existing(dir, {"ground truth", "ground_truth", "groundtruth"});
  if (gt_dir.empty()) gt_dir = dir;
  fs::path img_dir = first_existing(dir, {"positive image set", "positive_image_set"});
  if (img_dir.empty()) img_dir = dir;

  std::vector<fs::path> files;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(gt_dir, ec))
    if (entry.path().extension() == ".txt") files.push_back(entry.path());
  if (ec) {
    res.diagnostics.push_back(gt_dir.string() + ": " + ec.message());
    return res;
  }
  std::sort(files.begin(), files.end());

  static const std::regex line_re(
      R"(^\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s*,\s*\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s*,\s*(-?\d+)\s*$)");
  for (const auto& file : files) {
    std::vector<std::string> lines;
    try {
      lines = read_lines(file);
    } catch (const LoadError& e) {
      res.diagnostics.push_back(e.what());
      continue;
    }
    const std::string stem = file.stem().string();
    fs::path image = img_dir / (stem + ".jpg");
    if (!fs::exists(image, ec) && fs::exists(img_dir / (stem + ".png"), ec)) image = img_dir / (stem + ".png");
    int k = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (blank(lines[i])) continue;
      std::smatch m;
      const std::string where = file.string() + ":" + std::to_string(i + 1) + ": ";
      if (!std::regex_match(lines[i], m, line_re)) {
        res.diagnostics.push_back(where + "unrecognized annotation line");
        continue;
      }
      const int cls = std::stoi(m[5]);
      if (cls < 1 || cls > 10) {
        res.diagnostics.push_back(where + "class id " + std::to_string(cls) + " outside 1..10");
        continue;
      }
      auto box = BBox::make(std::max(0, std::stoi(m[1])), std::max(0, std::stoi(m[2])), std::stoi(m[3]),
                            std::stoi(m[4]));
      if (!box) {
        res.diagnostics.push_back(where + "degenerate box");
        continue;
      }
      TaskRecord r{.task_id = "nwpu-" + stem + "-" + std::to_string(k++),
                   .image_path = image,
                   .query = std::string("the ") + kNwpuClasses[cls - 1],
                   .truth_box = *box,
                   .dataset_tag = "nwpu-vhr-10"};
      if (!fs::exists(image, ec)) r.warning = "image file not found: " + image.string();
      res.records.push_back(std::move(r));
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// VRSBench

BBox enclosing_box(const std::vector<std::pair<double, double>>& corners) {
  if (corners.empty()) throw std::invalid_argument("enclosing_box: no corners");
  double x0 = corners[0].first, x1 = x0, y0 = corners[0].second, y1 = y0;
  for (const auto& [x, y] : corners) {
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  // Corners are pixel positions; the pixel holding the max corner is inside.
  return BBox(std::max(0, int(std::floor(x0))), std::max(0, int(std::floor(y0))),
              std::max(1, int(std::floor(x1)) + 1), std::max(1, int(std::floor(y1)) + 1));
}

AdapterResult adapt_vrsbench(const fs::path& file, const fs::path& images_dir) {
  std::ifstream in(file);
  if (!in) throw LoadError(file.string(), 0, "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  // Either one JSON array or JSON lines.
  std::vector<std::pair<std::size_t, json>> items;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') {
    json arr;
    try {
      arr = json::parse(text);
    } catch (const json::exception& e) {
      throw LoadError(file.string(), 0, e.what());
    }
    for (std::size_t i = 0; i < arr.size(); ++i) items.emplace_back(i + 1, arr[i]);
  } else {
    std::istringstream lines(text);
    std::size_t n = 0;
    for (std::string line; std::getline(lines, line);) {
      ++n;
      if (blank(line)) continue;
      try {
        items.emplace_back(n, json::parse(line));
      } catch (const json::exception& e) {
        throw LoadError(file.string(), n, e.what());
      }
    }
  }

  const fs::path base = images_dir.empty() ? file.parent_path() : images_dir;
  AdapterResult res;
  for (const auto& [pos, j] : items) {
    if (!j.is_object()) throw LoadError(file.string(), pos, "record is not a JSON object");
    for (const char* field : {"image_id", "question"})
      if (!j.contains(field)) throw LoadError(file.string(), pos, std::string("missing field '") + field + "'");
    if (!j.contains("obb") && !j.contains("bbox"))
      throw LoadError(file.string(), pos, "missing field 'obb' (or 'bbox')");

    const std::string where = file.string() + ":" + std::to_string(pos) + ": ";
    try {
      const std::string query = require_string(j, "question");
      if (blank(query)) {
        res.diagnostics.push_back(where + "empty referring expression");
        continue;
      }
      bool converted = false;
      BBox truth = [&] {
        std::vector<std::pair<double, double>> corners;
        if (j.contains("obb")) {
          const json& obb = j["obb"];
          if (!obb.is_array() || obb.size() != 4) throw std::invalid_argument("'obb' must hold four [x,y] corners");
          for (const auto& c : obb) {
            if (!c.is_array() || c.size() != 2 || !c[0].is_number() || !c[1].is_number())
              throw std::invalid_argument("'obb' corner must be [x, y]");
            corners.emplace_back(c[0].get<double>(), c[1].get<double>());
          }
          converted = true;
        } else {
          const json& b = j["bbox"];
          if (!b.is_array() || b.size() != 4) throw std::invalid_argument("'bbox' must be [x1,y1,x2,y2]");
          corners = {{b[0].get<double>(), b[1].get<double>()}, {b[2].get<double>(), b[3].get<double>()}};
        }
        return enclosing_box(corners);
      }();
      TaskRecord r{.task_id = {}, .image_path = base / require_string(j, "image_id"), .query = query,
                   .truth_box = truth, .dataset_tag = {}, .obb_converted = converted, .warning = {}};
      if (j.contains("question_id")) {
        const json& q = j["question_id"];
        r.task_id = "vrsbench-" + (q.is_string() ? q.get<std::string>() : q.dump());
      } else {
        r.task_id = "vrsbench-" + std::to_string(pos);
      }
      r.dataset_tag = "vrsbench";
      std::error_code ec;
      if (!fs::exists(r.image_path, ec)) r.warning = "image file not found: " + r.image_path.string();
      res.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      res.diagnostics.push_back(where + e.what());
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Metrics

double MetricsReport::acc(double threshold) const {
  for (const auto& [t, v] : acc_at)
    if (t == threshold) return v;
  throw std::out_of_range("threshold " + std::to_string(threshold) + " was not evaluated");
}

namespace {

double pairwise(const double* v, std::size_t n) {
  if (n == 0) return 0.0;
  if (n == 1) return v[0];
  const std::size_t h = n / 2;
  return pairwise(v, h) + pairwise(v + h, n - h);
}

}  // namespace

double stable_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return pairwise(values.data(), values.size());
}

MetricsReport compute_metrics(const std::vector<ScoredPair>& pairs, const std::vector<double>& thresholds) {
  if (pairs.empty()) throw std::invalid_argument("compute_metrics: no pairs to score");
  for (double t : thresholds)
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("thresholds must lie in (0,1)");

  MetricsReport r;
  r.n_tasks = pairs.size();
  std::vector<double> ious;
  ious.reserve(pairs.size());
  for (const auto& p : pairs) {
    const double v = p.predicted ? iou(*p.predicted, p.truth) : 0.0;
    if (p.predicted) ++r.n_scored;
    ious.push_back(v);
    r.per_task.push_back({p.task_id, v, p.provenance});
  }
  r.miou = stable_sum(ious) / double(ious.size());
  for (double t : thresholds) {
    const auto hits = std::count_if(ious.begin(), ious.end(), [t](double v) { return v > t; });
    r.acc_at.emplace_back(t, double(hits) / double(ious.size()));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Result lines

json result_to_json(const ResultLine& r) {
  json j = {{"task_id", r.task_id},
            {"bbox", r.bbox ? wire::box_to_json(*r.bbox) : json(nullptr)},
            {"provenance", r.provenance}};
  if (r.iou) j["iou"] = *r.iou;
  j["trace_digest"] = r.trace_digest;
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

ResultLine result_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("result line is not a JSON object");
  ResultLine r;
  r.task_id = require_string(j, "task_id");
  if (!j.contains("bbox")) throw std::invalid_argument("missing field 'bbox'");
  if (!j["bbox"].is_null()) r.bbox = wire::box_from_json(j["bbox"]);
  r.provenance = require_string(j, "provenance");
  if (j.contains("iou") && !j["iou"].is_null()) r.iou = j["iou"].get<double>();
  if (j.contains("trace_digest")) r.trace_digest = require_string(j, "trace_digest");
  if (j.contains("error")) r.error = require_string(j, "error");
  return r;
}

std::vector<ResultLine> read_results(const fs::path& path) {
  const auto lines = read_lines(path);
  std::vector<ResultLine> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    try {
      out.push_back(result_from_json(json::parse(lines[i])));
    } catch (const std::exception& e) {
      throw LoadError(path.string(), i + 1, e.what());
    }
  }
  return out;
}

MetricsReport evaluate(const std::vector<ResultLine>& results, const std::vector<TaskRecord>& tasks,
                       const std::vector<double>& thresholds) {
  std::map<std::string, const ResultLine*> by_id;
  for (const auto& r : results) by_id[r.task_id] = &r;
  std::map<std::string, bool> known;
  for (const auto& t : tasks) known[t.task_id] = true;
  for (const auto& r : results)
    if (!known.count(r.task_id)) throw UnknownTaskError(r.task_id);

  std::vector<ScoredPair> pairs;
  for (const auto& t : tasks) {
    ScoredPair p{t.task_id, std::nullopt, t.truth_box, "missing"};
    if (auto it = by_id.find(t.task_id); it != by_id.end()) {
      p.predicted = it->second->bbox;
      p.provenance = it->second->provenance;
    }
    pairs.push_back(std::move(p));
  }
  return compute_metrics(pairs, thresholds);
}

}  // namespace diffusam

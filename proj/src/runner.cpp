#include "diffusam/runner.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "diffusam/config.hpp"
#include "diffusam/image_io.hpp"
#include "diffusam/raster_draw.hpp"

namespace diffusam {

namespace fs = std::filesystem;
using nlohmann::json;

HealthReport check_endpoints(const PipelineConfig& cfg) {
  HealthReport rep;
  for (Role r : kAllRoles) {
    const std::string name(to_string(r));
    auto it = cfg.endpoints.find(r);
    if (it == cfg.endpoints.end()) {
      rep.ok = false;
      rep.failures.push_back(name + ": no endpoint configured");
      rep.snapshot[name] = {{"ok", false}, {"error", "not configured"}};
      continue;
    }
    HealthStatus h;
    try {
      h = BackendClient(it->second).health();
    } catch (const std::exception& e) {
      h.error = e.what();
    }
    json entry = {{"base_url", it->second.base_url}, {"ok", h.ok}, {"roles", h.roles}};
    if (!h.ok) {
      entry["error"] = h.error;
      rep.ok = false;
      rep.failures.push_back(name + " (" + it->second.base_url + "): " + h.error);
    }
    rep.snapshot[name] = std::move(entry);
  }
  return rep;
}

std::string utc_now_iso8601() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

ImageBuffer legend_overlay(const ImageBuffer& image, const std::vector<BBox>& cues,
                           const MaybeBox& final_box, const MaybeBox& truth) {
  ImageBuffer out = image;
  for (const auto& c : cues) draw_rect_outline(out, c, 2, kRed);
  if (truth) draw_rect_outline(out, *truth, 2, kBlue);
  if (final_box) draw_rect_outline(out, *final_box, 2, kGreen);
  return out;
}

ImageBuffer cue_debug_overlay(const ImageBuffer& background, const BinaryMask& red_mask, const CueSet& cues) {
  ImageBuffer out = background;
  for (auto& v : out.pixels) v = std::uint8_t(v / 2);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      if (red_mask.dims == out.dims && red_mask.at(x, y)) {
        std::uint8_t* p = out.at(x, y);
        p[0] = 255;
        p[1] = 255;
        p[2] = 0;
      }
  for (const auto& b : cues.boxes)
    if (auto c = clamp_bbox(b, out.dims)) draw_rect_outline(out, *c, 1, kGreen);
  return out;
}

ResultLine to_result_line(const TaskOutcome& o, const MaybeBox& truth) {
  ResultLine line;
  line.task_id = o.task_id;
  if (o.result) {
    line.bbox = o.result->final_box;
    line.provenance = std::string(to_string(o.result->provenance));
    line.trace_digest = o.result->trace.digest();
    if (truth) line.iou = o.result->final_box ? iou(*o.result->final_box, *truth) : 0.0;
  } else {
    line.provenance = "none";
    line.error = o.error;
    if (truth) line.iou = 0.0;
  }
  return line;
}

namespace {

std::string file_safe(const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s;
}

}  // namespace

GroundRunSummary run_ground(const PipelineConfig& cfg, const GroundRunOptions& opts,
                            const HealthReport* health) {
  const std::string started = utc_now_iso8601();
  const auto records = load_canonical(opts.tasks_path);

  std::vector<GroundingTask> tasks;
  tasks.reserve(records.size());
  for (const auto& r : records)
    tasks.push_back(GroundingTask{r.task_id, nullptr, r.image_path, r.query, r.truth_box});

  const auto outcomes = ground_batch(tasks, cfg, opts.parallelism);

  GroundRunSummary summary;
  summary.n_tasks = outcomes.size();
  std::string body;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto line = to_result_line(outcomes[i], records[i].truth_box);
    body += result_to_json(line).dump() + "\n";
    if (outcomes[i].ok()) {
      ++summary.by_provenance[line.provenance];
    } else {
      ++summary.n_errors;
    }
  }
  write_file_atomic(opts.results_path, body);

  if (!opts.overlay_dir.empty()) {
    fs::create_directories(opts.overlay_dir);
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      if (!outcomes[i].ok()) continue;
      const auto& res = *outcomes[i].result;
      const ImageBuffer img = tasks[i].image ? *tasks[i].image : load_image(tasks[i].image_path);
      save_png(legend_overlay(img, res.cue_boxes, res.final_box, tasks[i].ground_truth),
               opts.overlay_dir / (file_safe(res.task_id) + ".png"));
    }
  }

  json by_prov = json::object();
  for (const auto& [k, v] : summary.by_provenance) by_prov[k] = v;
  json manifest = {
      {"tool", "diffusam"},
      {"version", DIFFUSAM_VERSION},
      {"started_at", started},
      {"finished_at", utc_now_iso8601()},
      {"tasks_file", fs::absolute(opts.tasks_path).string()},
      {"results_file", fs::absolute(opts.results_path).string()},
      {"parallelism", opts.parallelism},
      {"config", config_to_json(cfg)},
      {"counts", {{"total", summary.n_tasks}, {"errors", summary.n_errors}, {"by_provenance", by_prov}}},
      {"endpoint_health", health ? health->snapshot : json(nullptr)},
  };
  fs::path manifest_path = opts.manifest_path;
  if (manifest_path.empty()) {
    manifest_path = opts.results_path;
    manifest_path += ".manifest.json";
  }
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  return summary;
}

}  // namespace diffusam

#include "diffusam/diffusam.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "diffusam/config.hpp"
#include "diffusam/cues.hpp"
#include "diffusam/evaluation.hpp"
#include "diffusam/image_io.hpp"
#include "diffusam/imaging.hpp"
#include "diffusam/mock_backend.hpp"
#include "diffusam/pipeline.hpp"
#include "diffusam/runner.hpp"

using namespace diffusam;
using nlohmann::json;

struct dsam_image {
  ImageBuffer img;
};

struct dsam_config {
  PipelineConfig cfg;
};

struct dsam_mock_server {
  std::unique_ptr<MockBackend> backend;
};

namespace {

thread_local std::string g_last_error;

dsam_status fail(dsam_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs `fn`, translating exceptions into status codes.
template <class F>
dsam_status guarded(F&& fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const ImageIoError& e) {
    return fail(DSAM_ERR_IO, e.what());
  } catch (const BindError& e) {
    return fail(DSAM_ERR_BIND, e.what());
  } catch (const LoadError& e) {
    return fail(DSAM_ERR_PARSE, e.what());
  } catch (const UnknownTaskError& e) {
    return fail(DSAM_ERR_UNKNOWN_TASK, e.what());
  } catch (const BackendError& e) {
    return fail(e.kind() == BackendError::Kind::transport ? DSAM_ERR_TRANSPORT : DSAM_ERR_PROTOCOL,
                e.what());
  } catch (const json::exception& e) {
    return fail(DSAM_ERR_PARSE, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(DSAM_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(DSAM_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(DSAM_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(DSAM_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

EnhanceParams to_cpp(const dsam_enhance_params* p) {
  EnhanceParams e;
  if (p) {
    e.clahe_clip_limit = p->clahe_clip_limit;
    e.clahe_tile_grid = {p->clahe_tile_cols, p->clahe_tile_rows};
    e.unsharp_sigma = p->unsharp_sigma;
    e.unsharp_amount = p->unsharp_amount;
  }
  return e;
}

RedCueParams to_cpp(const dsam_cue_params* p) {
  RedCueParams c;
  if (p) {
    c.r_min = p->r_min;
    c.g_max = p->g_max;
    c.b_max = p->b_max;
    c.min_component_area = p->min_component_area;
    c.nesting_containment = p->nesting_containment;
  }
  return c;
}

#define DSAM_REQUIRE(cond, msg) \
  if (!(cond)) return fail(DSAM_ERR_INVALID_ARGUMENT, msg)

}  // namespace

extern "C" {

const char* dsam_version(void) { return DIFFUSAM_VERSION; }

const char* dsam_last_error(void) { return g_last_error.c_str(); }

const char* dsam_status_name(dsam_status s) {
  switch (s) {
    case DSAM_OK: return "ok";
    case DSAM_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case DSAM_ERR_IO: return "io";
    case DSAM_ERR_PARSE: return "parse";
    case DSAM_ERR_TRANSPORT: return "transport";
    case DSAM_ERR_PROTOCOL: return "protocol";
    case DSAM_ERR_UNKNOWN_TASK: return "unknown_task";
    case DSAM_ERR_BIND: return "bind";
    case DSAM_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void dsam_string_free(char* s) { std::free(s); }

// ---- Rasters

dsam_status dsam_image_load(const char* path, dsam_image** out) {
  return guarded([&] {
    DSAM_REQUIRE(path && out, "path and out must be non-null");
    *out = new dsam_image{load_image(path)};
    return DSAM_OK;
  });
}

dsam_status dsam_image_from_rgb(const uint8_t* pixels, int width, int height, dsam_image** out) {
  return guarded([&] {
    DSAM_REQUIRE(pixels && out, "pixels and out must be non-null");
    const Dims d(width, height);
    std::vector<std::uint8_t> px(pixels, pixels + std::size_t(d.area()) * 3);
    *out = new dsam_image{ImageBuffer(d, std::move(px))};
    return DSAM_OK;
  });
}

dsam_status dsam_image_save_png(const dsam_image* img, const char* path) {
  return guarded([&] {
    DSAM_REQUIRE(img && path, "img and path must be non-null");
    save_png(img->img, path);
    return DSAM_OK;
  });
}

dsam_status dsam_image_dims(const dsam_image* img, int* width, int* height) {
  return guarded([&] {
    DSAM_REQUIRE(img && width && height, "arguments must be non-null");
    *width = img->img.width();
    *height = img->img.height();
    return DSAM_OK;
  });
}

const uint8_t* dsam_image_pixels(const dsam_image* img) { return img ? img->img.pixels.data() : nullptr; }

void dsam_image_free(dsam_image* img) { delete img; }

// ---- Enhancement

void dsam_enhance_params_default(dsam_enhance_params* p) {
  if (!p) return;
  const EnhanceParams e;
  *p = {e.clahe_clip_limit, e.clahe_tile_grid.cols, e.clahe_tile_grid.rows, e.unsharp_sigma,
        e.unsharp_amount};
}

dsam_status dsam_preprocess(const dsam_image* in, const dsam_enhance_params* p, dsam_image** out) {
  return guarded([&] {
    DSAM_REQUIRE(in && out, "in and out must be non-null");
    *out = new dsam_image{preprocess(in->img, to_cpp(p))};
    return DSAM_OK;
  });
}

// ---- Cues

void dsam_cue_params_default(dsam_cue_params* p) {
  if (!p) return;
  const RedCueParams c;
  *p = {c.r_min, c.g_max, c.b_max, c.min_component_area, c.nesting_containment};
}

dsam_status dsam_extract_cues(const dsam_image* edited, const dsam_cue_params* p, dsam_box* boxes,
                              size_t capacity, size_t* count) {
  return guarded([&] {
    DSAM_REQUIRE(edited && count, "edited and count must be non-null");
    DSAM_REQUIRE(boxes || capacity == 0, "boxes is null with non-zero capacity");
    const CueSet cues = extract_cues(edited->img, to_cpp(p));
    *count = cues.boxes.size();
    for (std::size_t i = 0; i < cues.boxes.size() && i < capacity; ++i) {
      const BBox& b = cues.boxes[i];
      boxes[i] = {b.x_min(), b.y_min(), b.x_max(), b.y_max()};
    }
    return DSAM_OK;
  });
}

dsam_status dsam_cue_overlay(const dsam_image* background, const dsam_image* edited, const dsam_cue_params* p,
                             dsam_image** out) {
  return guarded([&] {
    DSAM_REQUIRE(background && edited && out, "arguments must be non-null");
    DSAM_REQUIRE(background->img.dims == edited->img.dims, "background and edited image sizes differ");
    const RedCueParams params = to_cpp(p);
    params.validate();
    const BinaryMask mask = red_pixel_mask(edited->img, params);
    *out = new dsam_image{cue_debug_overlay(background->img, mask, extract_cues(edited->img, params))};
    return DSAM_OK;
  });
}

// ---- Configuration

dsam_status dsam_config_load(const char* path, dsam_config** out) {
  return guarded([&] {
    DSAM_REQUIRE(out, "out must be non-null");
    auto cfg = std::make_unique<dsam_config>();
    if (path && *path) cfg->cfg = load_config(path);
    *out = cfg.release();
    return DSAM_OK;
  });
}

dsam_status dsam_config_apply_json(dsam_config* cfg, const char* text) {
  return guarded([&] {
    DSAM_REQUIRE(cfg && text, "cfg and json must be non-null");
    cfg->cfg = config_from_json(json::parse(text), cfg->cfg);
    return DSAM_OK;
  });
}

dsam_status dsam_config_to_json(const dsam_config* cfg, char** json_out) {
  return guarded([&] {
    DSAM_REQUIRE(cfg && json_out, "cfg and json_out must be non-null");
    *json_out = dup_string(config_to_json(cfg->cfg).dump(2));
    return DSAM_OK;
  });
}

void dsam_config_free(dsam_config* cfg) { delete cfg; }

dsam_status dsam_check_endpoints(const dsam_config* cfg, char** report_json) {
  return guarded([&] {
    DSAM_REQUIRE(cfg, "cfg must be non-null");
    const HealthReport rep = check_endpoints(cfg->cfg);
    if (report_json) *report_json = dup_string(rep.snapshot.dump(2));
    if (!rep.ok) {
      std::string msg = "unhealthy endpoints:";
      for (const auto& f : rep.failures) msg += "\n  " + f;
      return fail(DSAM_ERR_TRANSPORT, msg);
    }
    return DSAM_OK;
  });
}

// ---- Grounding

dsam_status dsam_ground_file(const dsam_config* cfg, const dsam_ground_options* opts,
                             dsam_ground_summary* summary) {
  return guarded([&] {
    DSAM_REQUIRE(cfg && opts && opts->tasks_path && opts->results_path, "config, tasks and results are required");
    DSAM_REQUIRE(opts->parallelism >= 1, "parallelism must be >= 1");
    cfg->cfg.validate();
    const HealthReport health = check_endpoints(cfg->cfg);
    if (!health.ok) {
      std::string msg = "unhealthy endpoints:";
      for (const auto& f : health.failures) msg += "\n  " + f;
      return fail(DSAM_ERR_TRANSPORT, msg);
    }
    GroundRunOptions o;
    o.tasks_path = opts->tasks_path;
    o.results_path = opts->results_path;
    if (opts->manifest_path) o.manifest_path = opts->manifest_path;
    if (opts->overlay_dir) o.overlay_dir = opts->overlay_dir;
    o.parallelism = opts->parallelism;
    const GroundRunSummary s = run_ground(cfg->cfg, o, &health);
    if (summary) *summary = {s.n_tasks, s.n_errors};
    return DSAM_OK;
  });
}

// ---- Evaluation

dsam_status dsam_evaluate_files(const char* results_path, const char* tasks_path, const double* thresholds,
                                size_t n_thresholds, const char* model_name, dsam_report_format format,
                                char** report_out) {
  return guarded([&] {
    DSAM_REQUIRE(results_path && tasks_path && report_out, "results, tasks and report_out are required");
    DSAM_REQUIRE(thresholds || n_thresholds == 0, "thresholds is null with non-zero count");
    std::vector<double> ts = n_thresholds ? std::vector<double>(thresholds, thresholds + n_thresholds)
                                          : kDefaultThresholds;
    const auto tasks = load_canonical(tasks_path);
    const auto results = read_results(results_path);
    MetricsReport m = evaluate(results, tasks, ts);
    std::string dataset = tasks.empty() ? "" : tasks.front().dataset_tag;
    for (const auto& t : tasks)
      if (t.dataset_tag != dataset) dataset = "mixed";
    if (dataset.empty()) dataset = "tasks";
    ReportFormat f = ReportFormat::summary;
    switch (format) {
      case DSAM_REPORT_SUMMARY: f = ReportFormat::summary; break;
      case DSAM_REPORT_TABLE: f = ReportFormat::table_text; break;
      case DSAM_REPORT_CSV: f = ReportFormat::csv; break;
      case DSAM_REPORT_JSON: f = ReportFormat::json; break;
      default: return fail(DSAM_ERR_INVALID_ARGUMENT, "unknown report format");
    }
    *report_out = dup_string(render_report({ReportRow{model_name ? model_name : "diffusam", dataset, std::move(m)}}, f));
    return DSAM_OK;
  });
}

dsam_status dsam_convert_dataset(const char* kind, const char* source, const char* output_path,
                                 size_t* n_records, char** diagnostics) {
  return guarded([&] {
    DSAM_REQUIRE(kind && source && output_path, "kind, source and output are required");
    AdapterResult res;
    const std::string k = kind;
    if (k == "nwpu") {
      res = adapt_nwpu(source);
    } else if (k == "vrsbench") {
      res = adapt_vrsbench(source);
    } else {
      return fail(DSAM_ERR_INVALID_ARGUMENT, "unknown dataset kind '" + k + "' (nwpu, vrsbench)");
    }
    write_canonical(res.records, output_path);
    if (n_records) *n_records = res.records.size();
    if (diagnostics) {
      std::string text;
      for (const auto& d : res.diagnostics) text += d + "\n";
      *diagnostics = dup_string(text);
    }
    return DSAM_OK;
  });
}

// ---- Mock backends

dsam_status dsam_mock_server_start(const char* config_json, const char* host, int port, dsam_mock_server** out) {
  return guarded([&] {
    DSAM_REQUIRE(out, "out must be non-null");
    const json j = config_json && *config_json ? json::parse(config_json) : json::object();
    if (!j.is_object()) return fail(DSAM_ERR_INVALID_ARGUMENT, "mock config must be a JSON object");
    MockConfig cfg;
    std::vector<Role> roles;
    for (const auto& [key, v] : j.items()) {
      if (key == "behavior") cfg.behavior = mock_behavior_from_string(v.get<std::string>());
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "jitter_px") cfg.jitter_px = v.get<int>();
      else if (key == "shrink") cfg.shrink = v.get<double>();
      else if (key == "fail_rate") cfg.fail_rate = v.get<double>();
      else if (key == "stroke_px") cfg.stroke_px = v.get<int>();
      else if (key == "log_requests") cfg.log_requests = v.get<bool>();
      else if (key == "rewrite_suffixes") cfg.rewrite_suffixes = v.get<std::vector<std::string>>();
      else if (key == "roles") {
        for (const auto& r : v) roles.push_back(role_from_string(r.get<std::string>()));
      } else if (key == "truth_tasks") {
        for (const auto& t : load_canonical(v.get<std::string>())) cfg.truth_table.emplace(t.task_id, t.truth_box);
      } else {
        return fail(DSAM_ERR_INVALID_ARGUMENT, "unknown mock config key '" + key + "'");
      }
    }
    *out = new dsam_mock_server{
        std::make_unique<MockBackend>(std::move(cfg), std::move(roles), host ? host : "127.0.0.1", port)};
    return DSAM_OK;
  });
}

int dsam_mock_server_port(const dsam_mock_server* server) {
  return server ? server->backend->port() : -1;
}

void dsam_mock_server_stop(dsam_mock_server* server) {
  if (server) server->backend->stop();
}

void dsam_mock_server_free(dsam_mock_server* server) { delete server; }

}  // extern "C"

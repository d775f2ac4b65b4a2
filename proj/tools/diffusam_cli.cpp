// diffusam command-line front end. Talks to the library only through diffusam.h.
//
// Exit codes: 0 ok, 1 data error, 2 backend connectivity, 64 usage.

#include <glob.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "diffusam/diffusam.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitData = 1;
constexpr int kExitConnectivity = 2;
constexpr int kExitUsage = 64;

struct ImageDeleter {
  void operator()(dsam_image* p) const { dsam_image_free(p); }
};
using ImagePtr = std::unique_ptr<dsam_image, ImageDeleter>;

struct ConfigDeleter {
  void operator()(dsam_config* p) const { dsam_config_free(p); }
};
using ConfigPtr = std::unique_ptr<dsam_config, ConfigDeleter>;

struct OwnedString {
  char* s = nullptr;
  ~OwnedString() { dsam_string_free(s); }
  std::string str() const { return s ? s : ""; }
};

int report(dsam_status st, const std::string& context) {
  std::cerr << "diffusam: " << context << ": " << dsam_last_error() << " (" << dsam_status_name(st) << ")\n";
  return st == DSAM_ERR_TRANSPORT ? kExitConnectivity : kExitData;
}

int usage_error(const std::string& msg) {
  std::cerr << "diffusam: " << msg << "\nRun with --help for usage.\n";
  return kExitUsage;
}

// "8x8" -> {8, 8}
std::optional<std::pair<int, int>> parse_grid(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos) return std::nullopt;
  try {
    std::size_t a = 0, b = 0;
    const int cols = std::stoi(s.substr(0, x), &a);
    const int rows = std::stoi(s.substr(x + 1), &b);
    if (a != x || b != s.size() - x - 1 || cols < 1 || rows < 1) return std::nullopt;
    return std::make_pair(cols, rows);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<std::vector<double>> parse_thresholds(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string f; std::getline(ss, f, ',');) {
    try {
      std::size_t used = 0;
      const double v = std::stod(f, &used);
      if (used != f.size() || !(v >= 0.0 && v <= 1.0)) return std::nullopt;
      out.push_back(v);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  if (out.empty()) return std::nullopt;
  return out;
}

std::vector<std::string> expand_inputs(const std::vector<std::string>& patterns) {
  std::vector<std::string> out;
  for (const auto& p : patterns) {
    glob_t g{};
    if (::glob(p.c_str(), GLOB_NOCHECK, nullptr, &g) == 0) {
      for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    } else {
      out.push_back(p);
    }
    ::globfree(&g);
  }
  return out;
}

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

// ---- preprocess

struct PreprocessArgs {
  std::vector<std::string> inputs;
  std::string output_dir;
  double clip = 0;
  std::string tile = "8x8";
  double sigma = 0;
  double amount = 0;
};

int cmd_preprocess(const PreprocessArgs& a) {
  dsam_enhance_params p;
  dsam_enhance_params_default(&p);
  p.clahe_clip_limit = a.clip;
  const auto grid = parse_grid(a.tile);
  if (!grid) return usage_error("--tile expects COLSxROWS, got '" + a.tile + "'");
  p.clahe_tile_cols = grid->first;
  p.clahe_tile_rows = grid->second;
  p.unsharp_sigma = a.sigma;
  p.unsharp_amount = a.amount;

  std::error_code ec;
  fs::create_directories(a.output_dir, ec);
  if (ec) {
    std::cerr << "diffusam: cannot create " << a.output_dir << ": " << ec.message() << "\n";
    return kExitData;
  }

  int rc = kExitOk;
  for (const auto& in : expand_inputs(a.inputs)) {
    const auto t0 = std::chrono::steady_clock::now();
    dsam_image* raw = nullptr;
    dsam_status st = dsam_image_load(in.c_str(), &raw);
    ImagePtr src(raw);
    if (st != DSAM_OK) {
      rc = report(st, in);
      continue;
    }
    dsam_image* out_raw = nullptr;
    st = dsam_preprocess(src.get(), &p, &out_raw);
    ImagePtr out(out_raw);
    if (st != DSAM_OK) {
      if (st == DSAM_ERR_INVALID_ARGUMENT) return usage_error(dsam_last_error());
      rc = report(st, in);
      continue;
    }
    const fs::path dest = fs::path(a.output_dir) / (fs::path(in).stem().string() + ".png");
    st = dsam_image_save_png(out.get(), dest.c_str());
    if (st != DSAM_OK) {
      rc = report(st, dest.string());
      continue;
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s\t%s\t%.1f ms\n", in.c_str(), dest.c_str(), ms);
  }
  return rc;
}

// ---- ground

struct GroundArgs {
  std::string tasks;
  std::string config;
  std::string output;
  std::string manifest;
  std::string overlay;
  int parallelism = 1;
  std::optional<double> p_threshold;
  std::optional<double> crop_margin;
  std::optional<int> min_mask_pixels;
  std::vector<std::string> endpoints;  // role=url
  std::string initial_segment_mode;
};

int cmd_ground(const GroundArgs& a) {
  dsam_config* raw = nullptr;
  dsam_status st = dsam_config_load(a.config.empty() ? nullptr : a.config.c_str(), &raw);
  ConfigPtr cfg(raw);
  if (st != DSAM_OK) return report(st, "config");

  json overlay = json::object();
  if (a.p_threshold) overlay["p_threshold"] = *a.p_threshold;
  if (a.crop_margin) overlay["crop_margin"] = *a.crop_margin;
  if (a.min_mask_pixels) overlay["min_mask_pixels"] = *a.min_mask_pixels;
  if (!a.initial_segment_mode.empty()) overlay["initial_segment_mode"] = a.initial_segment_mode;
  for (const auto& e : a.endpoints) {
    const auto eq = e.find('=');
    if (eq == std::string::npos || eq == 0) return usage_error("--endpoint expects ROLE=URL, got '" + e + "'");
    overlay["endpoints"][e.substr(0, eq)]["base_url"] = e.substr(eq + 1);
  }
  if (!overlay.empty()) {
    st = dsam_config_apply_json(cfg.get(), overlay.dump().c_str());
    if (st != DSAM_OK) return usage_error(dsam_last_error());
  }

  dsam_ground_options opts{};
  opts.tasks_path = a.tasks.c_str();
  opts.results_path = a.output.c_str();
  opts.manifest_path = a.manifest.empty() ? nullptr : a.manifest.c_str();
  opts.overlay_dir = a.overlay.empty() ? nullptr : a.overlay.c_str();
  opts.parallelism = a.parallelism;
  dsam_ground_summary summary{};
  st = dsam_ground_file(cfg.get(), &opts, &summary);
  if (st != DSAM_OK) return report(st, "ground");
  std::cerr << "diffusam: grounded " << summary.n_tasks << " tasks, " << summary.n_errors << " errors\n";
  return summary.n_errors > 0 ? kExitData : kExitOk;
}

// ---- eval

struct EvalArgs {
  std::string results;
  std::string tasks;
  std::string thresholds = "0.5,0.7";
  std::string format = "summary";
  std::string model = "diffusam";
  std::string output;
};

int cmd_eval(const EvalArgs& a) {
  const auto ts = parse_thresholds(a.thresholds);
  if (!ts) return usage_error("--thresholds expects comma-separated values in [0,1]");
  dsam_report_format f = DSAM_REPORT_SUMMARY;
  if (a.format == "table") f = DSAM_REPORT_TABLE;
  else if (a.format == "csv") f = DSAM_REPORT_CSV;
  else if (a.format == "json") f = DSAM_REPORT_JSON;

  OwnedString text;
  const dsam_status st =
      dsam_evaluate_files(a.results.c_str(), a.tasks.c_str(), ts->data(), ts->size(), a.model.c_str(), f, &text.s);
  if (st != DSAM_OK) return report(st, "eval");
  if (a.output.empty()) {
    std::cout << text.str();
  } else {
    std::FILE* fp = std::fopen(a.output.c_str(), "wb");
    if (!fp) {
      std::cerr << "diffusam: cannot write " << a.output << "\n";
      return kExitData;
    }
    const std::string s = text.str();
    std::fwrite(s.data(), 1, s.size(), fp);
    std::fclose(fp);
  }
  return kExitOk;
}

// ---- mock-serve

struct MockArgs {
  std::uint64_t seed = 0;
  std::string behavior = "oracle";
  std::string truth;
  std::string host = "127.0.0.1";
  int port = 8765;
  double shrink = 1.0;
  int jitter_px = 4;
  double fail_rate = 0.0;
  int stroke_px = 3;
  std::vector<std::string> roles;
  std::vector<std::string> rewrite_suffixes;
  bool quiet = false;
};

int cmd_mock_serve(const MockArgs& a) {
  json cfg = {{"behavior", a.behavior}, {"seed", a.seed},           {"shrink", a.shrink},
              {"jitter_px", a.jitter_px}, {"fail_rate", a.fail_rate}, {"stroke_px", a.stroke_px},
              {"log_requests", !a.quiet}};
  if (!a.truth.empty()) cfg["truth_tasks"] = a.truth;
  if (!a.roles.empty()) cfg["roles"] = a.roles;
  if (!a.rewrite_suffixes.empty()) cfg["rewrite_suffixes"] = a.rewrite_suffixes;

  dsam_mock_server* server = nullptr;
  const dsam_status st = dsam_mock_server_start(cfg.dump().c_str(), a.host.c_str(), a.port, &server);
  if (st != DSAM_OK) {
    if (st == DSAM_ERR_INVALID_ARGUMENT) return usage_error(dsam_last_error());
    return report(st, "mock-serve");
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::printf("listening on port %d\n", dsam_mock_server_port(server));
  std::fflush(stdout);
  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  dsam_mock_server_stop(server);
  dsam_mock_server_free(server);
  return kExitOk;
}

// ---- cues

struct CuesArgs {
  std::string image;
  std::string edited;
  std::string overlay;
  int r_min = 0, g_max = 0, b_max = 0, min_area = 0;
  double containment = 0;
};

int cmd_cues(const CuesArgs& a) {
  dsam_cue_params p{a.r_min, a.g_max, a.b_max, a.min_area, a.containment};

  dsam_image* raw = nullptr;
  dsam_status st = dsam_image_load(a.image.c_str(), &raw);
  ImagePtr image(raw);
  if (st != DSAM_OK) return report(st, a.image);
  ImagePtr edited_holder;
  const dsam_image* edited = image.get();
  if (!a.edited.empty()) {
    raw = nullptr;
    st = dsam_image_load(a.edited.c_str(), &raw);
    edited_holder.reset(raw);
    if (st != DSAM_OK) return report(st, a.edited);
    edited = edited_holder.get();
  }

  std::size_t count = 0;
  st = dsam_extract_cues(edited, &p, nullptr, 0, &count);
  if (st == DSAM_ERR_INVALID_ARGUMENT) return usage_error(dsam_last_error());
  if (st != DSAM_OK) return report(st, "cues");
  std::vector<dsam_box> boxes(count);
  st = dsam_extract_cues(edited, &p, boxes.data(), boxes.size(), &count);
  if (st != DSAM_OK) return report(st, "cues");

  json out = json::array();
  for (const auto& b : boxes) out.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
  std::cout << out.dump() << "\n";

  if (!a.overlay.empty()) {
    dsam_image* ov_raw = nullptr;
    st = dsam_cue_overlay(image.get(), edited, &p, &ov_raw);
    ImagePtr ov(ov_raw);
    if (st != DSAM_OK) return report(st, "overlay");
    st = dsam_image_save_png(ov.get(), a.overlay.c_str());
    if (st != DSAM_OK) return report(st, a.overlay);
  }
  return kExitOk;
}

// ---- convert

struct ConvertArgs {
  std::string kind;
  std::string source;
  std::string output;
};

int cmd_convert(const ConvertArgs& a) {
  std::size_t n = 0;
  OwnedString diag;
  const dsam_status st = dsam_convert_dataset(a.kind.c_str(), a.source.c_str(), a.output.c_str(), &n, &diag.s);
  if (st != DSAM_OK) return report(st, "convert");
  std::cerr << diag.str();
  std::cout << n << " records written to " << a.output << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Referring-expression grounding for aerial imagery"};
  app.set_version_flag("--version", dsam_version());
  app.require_subcommand(1);

  dsam_enhance_params ep;
  dsam_enhance_params_default(&ep);
  dsam_cue_params cp;
  dsam_cue_params_default(&cp);

  PreprocessArgs pre;
  pre.clip = ep.clahe_clip_limit;
  pre.tile = std::to_string(ep.clahe_tile_cols) + "x" + std::to_string(ep.clahe_tile_rows);
  pre.sigma = ep.unsharp_sigma;
  pre.amount = ep.unsharp_amount;
  auto* sp = app.add_subcommand("preprocess", "Contrast-enhance and sharpen images");
  sp->add_option("inputs", pre.inputs, "Input images or glob patterns")->required();
  sp->add_option("-o,--output", pre.output_dir, "Output directory")->required();
  sp->add_option("--clahe-clip", pre.clip, "CLAHE clip limit")->capture_default_str();
  sp->add_option("--tile", pre.tile, "CLAHE tile grid COLSxROWS")->capture_default_str();
  sp->add_option("--unsharp-sigma", pre.sigma, "Unsharp mask sigma (px)")->capture_default_str();
  sp->add_option("--unsharp-amount", pre.amount, "Unsharp mask amount")->capture_default_str();

  GroundArgs gr;
  auto* sg = app.add_subcommand("ground", "Ground every task against the configured backends");
  sg->add_option("tasks", gr.tasks, "Canonical task JSONL")->required();
  sg->add_option("-c,--config", gr.config, "Pipeline config JSON");
  sg->add_option("-o,--output", gr.output, "Result JSONL")->required();
  sg->add_option("--manifest", gr.manifest, "Run manifest path (default <output>.manifest.json)");
  sg->add_option("--overlay", gr.overlay, "Directory for overlay PNGs");
  sg->add_option("-j,--parallelism", gr.parallelism, "Worker count")->check(CLI::Range(1, 256))->capture_default_str();
  sg->add_option("--p-threshold", gr.p_threshold, "Refiner routing threshold (percent)");
  sg->add_option("--crop-margin", gr.crop_margin, "Crop margin as a fraction of the box side");
  sg->add_option("--min-mask-pixels", gr.min_mask_pixels, "Minimum foreground pixels for a valid mask");
  sg->add_option("--initial-segment-mode", gr.initial_segment_mode, "cue_boxes or edited_image_text");
  sg->add_option("--endpoint", gr.endpoints, "Endpoint override ROLE=URL (repeatable)");

  EvalArgs ev;
  auto* se = app.add_subcommand("eval", "Score results against ground truth");
  se->add_option("results", ev.results, "Result JSONL")->required();
  se->add_option("tasks", ev.tasks, "Canonical task JSONL")->required();
  se->add_option("--thresholds", ev.thresholds, "Comma-separated IoU thresholds")->capture_default_str();
  se->add_option("--format", ev.format, "Report format")
      ->check(CLI::IsMember({"summary", "table", "csv", "json"}))
      ->capture_default_str();
  se->add_option("--model", ev.model, "Model name in the report")->capture_default_str();
  se->add_option("--output", ev.output, "Write the report to a file instead of stdout");

  MockArgs mk;
  auto* sm = app.add_subcommand("mock-serve", "Serve deterministic mock backends for every role");
  sm->add_option("--seed", mk.seed, "RNG seed")->capture_default_str();
  sm->add_option("--behavior", mk.behavior, "oracle, jitter, hallucinate or fail")
      ->check(CLI::IsMember({"oracle", "jitter", "hallucinate", "fail"}))
      ->capture_default_str();
  sm->add_option("--truth", mk.truth, "Canonical task JSONL supplying truth boxes");
  sm->add_option("--host", mk.host, "Bind address")->capture_default_str();
  sm->add_option("--port", mk.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535))->capture_default_str();
  sm->add_option("--shrink", mk.shrink, "Segmenter mask shrink factor")->capture_default_str();
  sm->add_option("--jitter-px", mk.jitter_px, "Jitter amplitude (px)")->capture_default_str();
  sm->add_option("--fail-rate", mk.fail_rate, "Injected failure probability")->capture_default_str();
  sm->add_option("--stroke-px", mk.stroke_px, "Red outline stroke width")->capture_default_str();
  sm->add_option("--roles", mk.roles, "Roles to serve (default all)");
  sm->add_option("--rewrite-suffix", mk.rewrite_suffixes, "Suffix stripped by the rewriter (repeatable)");
  sm->add_flag("-q,--quiet", mk.quiet, "Do not log requests");

  CuesArgs cu;
  cu.r_min = cp.r_min;
  cu.g_max = cp.g_max;
  cu.b_max = cp.b_max;
  cu.min_area = cp.min_component_area;
  cu.containment = cp.nesting_containment;
  auto* sc = app.add_subcommand("cues", "Extract red-highlight boxes from an edited image");
  sc->add_option("image", cu.image, "Image (overlay background; also the edited image unless --edited)")
      ->required();
  sc->add_option("--edited", cu.edited, "Edited image containing the red highlight");
  sc->add_option("--overlay", cu.overlay, "Write a debug overlay PNG");
  sc->add_option("--r-min", cu.r_min, "Red threshold")->check(CLI::Range(0, 255))->capture_default_str();
  sc->add_option("--g-max", cu.g_max, "Green ceiling")->check(CLI::Range(0, 255))->capture_default_str();
  sc->add_option("--b-max", cu.b_max, "Blue ceiling")->check(CLI::Range(0, 255))->capture_default_str();
  sc->add_option("--min-area", cu.min_area, "Minimum component pixels")->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sc->add_option("--containment", cu.containment, "Nesting containment threshold")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();

  ConvertArgs cv;
  auto* sv = app.add_subcommand("convert", "Convert a dataset release to canonical task JSONL");
  sv->add_option("kind", cv.kind, "nwpu or vrsbench")->required()->check(CLI::IsMember({"nwpu", "vrsbench"}));
  sv->add_option("source", cv.source, "Dataset directory (nwpu) or annotation file (vrsbench)")->required();
  sv->add_option("output", cv.output, "Canonical JSONL to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (sp->parsed()) return cmd_preprocess(pre);
  if (sg->parsed()) return cmd_ground(gr);
  if (se->parsed()) return cmd_eval(ev);
  if (sm->parsed()) return cmd_mock_serve(mk);
  if (sc->parsed()) return cmd_cues(cu);
  if (sv->parsed()) return cmd_convert(cv);
  return kExitUsage;
}

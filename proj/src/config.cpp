#include "diffusam/config.hpp"

#include <fstream>
#include <set>

namespace diffusam {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw std::invalid_argument(std::string(where) + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw std::invalid_argument("unknown config key '" + std::string(where) + "." + k + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config key '" + std::string(where) + "." + key + "' has the wrong type");
  }
}

}  // namespace

json config_to_json(const PipelineConfig& cfg) {
  json endpoints = json::object();
  for (const auto& [role, ep] : cfg.endpoints)
    endpoints[std::string(to_string(role))] = {
        {"base_url", ep.base_url}, {"timeout_s", ep.timeout_s}, {"retries", ep.retries}};
  return {
      {"p_threshold", cfg.p_threshold},
      {"directional_keywords", cfg.directional_keywords},
      {"enhance",
       {{"clahe_clip_limit", cfg.enhance.clahe_clip_limit},
        {"clahe_tile_grid", {cfg.enhance.clahe_tile_grid.cols, cfg.enhance.clahe_tile_grid.rows}},
        {"unsharp_sigma", cfg.enhance.unsharp_sigma},
        {"unsharp_amount", cfg.enhance.unsharp_amount}}},
      {"cue",
       {{"r_min", cfg.cue.r_min},
        {"g_max", cfg.cue.g_max},
        {"b_max", cfg.cue.b_max},
        {"min_component_area", cfg.cue.min_component_area},
        {"nesting_containment", cfg.cue.nesting_containment}}},
      {"min_mask_pixels", cfg.min_mask_pixels},
      {"min_mask_score", cfg.min_mask_score},
      {"crop_margin", cfg.crop_margin},
      {"instruction_template", cfg.instruction_template},
      {"initial_segment_mode", std::string(to_string(cfg.initial_segment_mode))},
      {"endpoints", endpoints},
  };
}

PipelineConfig config_from_json(const json& j, PipelineConfig cfg) {
  check_keys(j, "config",
             {"p_threshold", "directional_keywords", "enhance", "cue", "min_mask_pixels",
              "min_mask_score", "crop_margin", "instruction_template", "initial_segment_mode",
              "endpoints"});
  read(j, "p_threshold", cfg.p_threshold, "config");
  read(j, "directional_keywords", cfg.directional_keywords, "config");
  read(j, "min_mask_pixels", cfg.min_mask_pixels, "config");
  read(j, "min_mask_score", cfg.min_mask_score, "config");
  read(j, "crop_margin", cfg.crop_margin, "config");
  read(j, "instruction_template", cfg.instruction_template, "config");
  if (j.contains("initial_segment_mode")) {
    std::string mode;
    read(j, "initial_segment_mode", mode, "config");
    cfg.initial_segment_mode = initial_segment_mode_from_string(mode);
  }
  if (j.contains("enhance")) {
    const json& e = j["enhance"];
    check_keys(e, "enhance", {"clahe_clip_limit", "clahe_tile_grid", "unsharp_sigma", "unsharp_amount"});
    read(e, "clahe_clip_limit", cfg.enhance.clahe_clip_limit, "enhance");
    read(e, "unsharp_sigma", cfg.enhance.unsharp_sigma, "enhance");
    read(e, "unsharp_amount", cfg.enhance.unsharp_amount, "enhance");
    if (e.contains("clahe_tile_grid")) {
      std::vector<int> grid;
      read(e, "clahe_tile_grid", grid, "enhance");
      if (grid.size() != 2) throw std::invalid_argument("enhance.clahe_tile_grid must be [cols, rows]");
      cfg.enhance.clahe_tile_grid = {grid[0], grid[1]};
    }
  }
  if (j.contains("cue")) {
    const json& c = j["cue"];
    check_keys(c, "cue", {"r_min", "g_max", "b_max", "min_component_area", "nesting_containment"});
    read(c, "r_min", cfg.cue.r_min, "cue");
    read(c, "g_max", cfg.cue.g_max, "cue");
    read(c, "b_max", cfg.cue.b_max, "cue");
    read(c, "min_component_area", cfg.cue.min_component_area, "cue");
    read(c, "nesting_containment", cfg.cue.nesting_containment, "cue");
  }
  if (j.contains("endpoints")) {
    const json& eps = j["endpoints"];
    if (!eps.is_object()) throw std::invalid_argument("endpoints must be a JSON object");
    for (const auto& [name, ej] : eps.items()) {
      const Role role = role_from_string(name);
      BackendEndpoint ep = cfg.endpoints.count(role) ? cfg.endpoints[role] : BackendEndpoint{};
      ep.role = role;
      const std::string where = "endpoints." + name;
      check_keys(ej, where, {"base_url", "timeout_s", "retries"});
      read(ej, "base_url", ep.base_url, where);
      read(ej, "timeout_s", ep.timeout_s, where);
      read(ej, "retries", ep.retries, where);
      cfg.endpoints[role] = ep;
    }
  }
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

}  // namespace diffusam

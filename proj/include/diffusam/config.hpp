#pragma once

#include <filesystem>

#include "json.hpp"

#include "diffusam/pipeline.hpp"

namespace diffusam {

/// Full JSON snapshot of a configuration (every field, endpoints included).
nlohmann::json config_to_json(const PipelineConfig& cfg);

/// Overlays the fields present in `j` onto `base`. Unknown keys are rejected
/// so that typos do not silently fall back to defaults. Throws
/// std::invalid_argument naming the offending key.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

}  // namespace diffusam

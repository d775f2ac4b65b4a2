#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "diffusam/evaluation.hpp"
#include "diffusam/geometry.hpp"
#include "diffusam/imaging.hpp"
#include "diffusam/mock_backend.hpp"
#include "diffusam/pipeline.hpp"

namespace diffusam::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Smooth greenish-gray texture. Red never dominates green, so no pixel
/// passes the red-cue predicate even after enhancement.
ImageBuffer textured_background(Dims d, std::uint64_t seed);

/// Random RGB noise.
ImageBuffer random_image(Dims d, std::mt19937_64& rng);

struct SyntheticTask {
  std::string task_id;
  std::shared_ptr<const ImageBuffer> image;
  BBox truth;
  std::string query;
};

/// `n` tasks on `d`-sized rasters with truth boxes whose sides lie in
/// [min_side, max_side].
std::vector<SyntheticTask> make_tasks(int n, Dims d, std::uint64_t seed, int min_side, int max_side);

std::vector<GroundingTask> to_grounding_tasks(const std::vector<SyntheticTask>& tasks);
std::map<std::string, BBox> truth_table(const std::vector<SyntheticTask>& tasks);

/// Saves each raster as PNG next to a canonical task file; returns its path.
std::filesystem::path write_task_file(const std::vector<SyntheticTask>& tasks,
                                      const std::filesystem::path& dir, const std::string& dataset = "synthetic");

/// One mock server for the editor and rewriter and another for both
/// segmenters, so each side can misbehave independently.
class MockFleet {
 public:
  MockFleet(MockConfig editor_cfg, MockConfig segmenter_cfg);

  PipelineConfig pipeline_config(int retries = 0) const;

  MockBackend& editor() { return *editor_; }
  MockBackend& segmenters() { return *segmenters_; }

 private:
  std::unique_ptr<MockBackend> editor_;
  std::unique_ptr<MockBackend> segmenters_;
};

/// Oracle MockConfig keyed on `tasks`.
MockConfig oracle_config(const std::vector<SyntheticTask>& tasks, std::uint64_t seed = 7);

/// URL of a local port that currently refuses connections.
std::string unused_local_url();

std::string read_file(const std::filesystem::path& p);

}  // namespace diffusam::testing

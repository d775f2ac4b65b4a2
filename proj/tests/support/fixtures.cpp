#include "fixtures.hpp"

#include <stdlib.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "diffusam/image_io.hpp"

namespace diffusam::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  std::string tmpl = (fs::temp_directory_path() / "diffusam-test-XXXXXX").string();
  if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

ImageBuffer textured_background(Dims d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  const double p1 = phase(rng), p2 = phase(rng), p3 = phase(rng);
  std::uniform_int_distribution<int> noise(-6, 6);
  ImageBuffer img(d);
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const double wave = std::sin(x * 0.11 + p1) + std::sin(y * 0.07 + p2) + 0.5 * std::sin((x + y) * 0.05 + p3);
      const int g = std::clamp(int(130 + 18 * wave) + noise(rng), 95, 175);
      const int r = std::clamp(g - 25 + noise(rng), 40, 160);
      const int b = std::clamp(g - 15 + noise(rng), 40, 170);
      std::uint8_t* p = img.at(x, y);
      p[0] = std::uint8_t(r);
      p[1] = std::uint8_t(g);
      p[2] = std::uint8_t(b);
    }
  }
  return img;
}

ImageBuffer random_image(Dims d, std::mt19937_64& rng) {
  ImageBuffer img(d);
  for (auto& v : img.pixels) v = std::uint8_t(rng() & 0xff);
  return img;
}

std::vector<SyntheticTask> make_tasks(int n, Dims d, std::uint64_t seed, int min_side, int max_side) {
  std::mt19937_64 rng(seed);
  std::vector<SyntheticTask> out;
  static const char* kQueries[] = {"the ship on the left", "the storage tank at the top",
                                   "the airplane in the lower right corner", "the bridge",
                                   "the vehicle on the right side of the road"};
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int> side(min_side, max_side);
    const int w = side(rng), h = side(rng);
    std::uniform_int_distribution<int> xs(0, d.width - w), ys(0, d.height - h);
    const int x = xs(rng), y = ys(rng);
    char id[32];
    std::snprintf(id, sizeof id, "task-%03d", i);
    out.push_back({id, std::make_shared<const ImageBuffer>(textured_background(d, seed * 1000 + i)),
                   BBox(x, y, x + w, y + h), kQueries[i % 5]});
  }
  return out;
}

std::vector<GroundingTask> to_grounding_tasks(const std::vector<SyntheticTask>& tasks) {
  std::vector<GroundingTask> out;
  for (const auto& t : tasks) out.push_back({t.task_id, t.image, {}, t.query, t.truth});
  return out;
}

std::map<std::string, BBox> truth_table(const std::vector<SyntheticTask>& tasks) {
  std::map<std::string, BBox> m;
  for (const auto& t : tasks) m.emplace(t.task_id, t.truth);
  return m;
}

fs::path write_task_file(const std::vector<SyntheticTask>& tasks, const fs::path& dir, const std::string& dataset) {
  fs::create_directories(dir / "images");
  std::vector<TaskRecord> records;
  for (const auto& t : tasks) {
    const fs::path img = dir / "images" / (t.task_id + ".png");
    save_png(*t.image, img);
    records.push_back({t.task_id, img, t.query, t.truth, dataset, false, {}});
  }
  const fs::path file = dir / "tasks.jsonl";
  write_canonical(records, file);
  return file;
}

MockFleet::MockFleet(MockConfig editor_cfg, MockConfig segmenter_cfg)
    : editor_(std::make_unique<MockBackend>(std::move(editor_cfg), std::vector<Role>{Role::editor, Role::rewriter})),
      segmenters_(std::make_unique<MockBackend>(std::move(segmenter_cfg),
                                                std::vector<Role>{Role::segmenter_small, Role::segmenter_large})) {}

PipelineConfig MockFleet::pipeline_config(int retries) const {
  PipelineConfig cfg;
  cfg.endpoints[Role::editor] = editor_->endpoint(Role::editor, 10.0, retries);
  cfg.endpoints[Role::rewriter] = editor_->endpoint(Role::rewriter, 10.0, retries);
  cfg.endpoints[Role::segmenter_small] = segmenters_->endpoint(Role::segmenter_small, 10.0, retries);
  cfg.endpoints[Role::segmenter_large] = segmenters_->endpoint(Role::segmenter_large, 10.0, retries);
  return cfg;
}

MockConfig oracle_config(const std::vector<SyntheticTask>& tasks, std::uint64_t seed) {
  MockConfig c;
  c.behavior = MockBehavior::oracle;
  c.seed = seed;
  c.truth_table = truth_table(tasks);
  return c;
}

std::string unused_local_url() {
  // Bind, note the port, release it.
  MockBackend probe(MockConfig{}, {});
  const std::string url = probe.base_url();
  probe.stop();
  return url;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace diffusam::testing

#include <gtest/gtest.h>

#include <algorithm>

#include "diffusam/config.hpp"
#include "diffusam/pipeline.hpp"
#include "diffusam/raster_draw.hpp"
#include "fixtures.hpp"

using namespace diffusam;
namespace tst = diffusam::testing;
using nlohmann::json;

namespace {

const StageRecord* find_stage(const GroundingResult& r, const std::string& name) {
  for (const auto& s : r.trace.stages)
    if (s.stage == name) return &s;
  return nullptr;
}

std::vector<std::string> stage_names(const GroundingResult& r) {
  std::vector<std::string> out;
  for (const auto& s : r.trace.stages) out.push_back(s.stage);
  return out;
}

BinaryMask mask_with(Dims d, const BBox& b, double score) {
  BinaryMask m(d, score);
  for (int y = b.y_min(); y < b.y_max(); ++y)
    for (int x = b.x_min(); x < b.x_max(); ++x) m.set(x, y);
  return m;
}

MockConfig failing() {
  MockConfig c;
  c.behavior = MockBehavior::fail;
  return c;
}

}  // namespace

// ---- small pieces

TEST(StripKeywords, Examples) {
  const auto& kw = kDefaultDirectionalKeywords;
  EXPECT_EQ(strip_directional_keywords(
                "The tennis court located on the right side of the image with a blue playing surface.", kw),
            "The tennis court located on the side of the image with a blue playing surface.");
  EXPECT_EQ(strip_directional_keywords("brighten the image", kw), "brighten the image");
  EXPECT_EQ(strip_directional_keywords("left left right", kw), "");
  EXPECT_EQ(strip_directional_keywords("The UPPER Left plane", kw), "The plane");
  EXPECT_EQ(strip_directional_keywords("bright leftover", kw), "bright leftover");
  EXPECT_EQ(strip_directional_keywords("  a   b  ", {}), "a b");
}

TEST(Routing, StrictlyMoreThanThreshold) {
  const Dims d(1000, 1000);
  EXPECT_EQ(select_refiner(BBox(0, 0, 200, 500), d, 10.0), Route::small);  // exactly 10%
  EXPECT_EQ(select_refiner(BBox(0, 0, 201, 500), d, 10.0), Route::large);
  EXPECT_EQ(select_refiner(BBox(0, 0, 100, 100), Dims(1000, 100), 10.0), Route::small);
  EXPECT_EQ(select_refiner(BBox(0, 0, 101, 100), Dims(1000, 100), 10.0), Route::large);
  EXPECT_EQ(select_refiner(BBox(0, 0, 1, 1), d, 0.0), Route::large);
  EXPECT_EQ(select_refiner(BBox(0, 0, 1000, 1000), d, 100.0), Route::small);
}

TEST(ValidMask, PicksHighestScoreAboveMinimumSize) {
  const Dims d(20, 20);
  SegmentResponse r;
  r.masks = {mask_with(d, BBox(0, 0, 3, 3), 0.99), mask_with(d, BBox(0, 0, 5, 5), 0.7),
             mask_with(d, BBox(0, 0, 6, 6), 0.8)};
  const auto best = is_valid_mask(r, 10, 0.0);
  ASSERT_TRUE(best);
  EXPECT_DOUBLE_EQ(best->score, 0.8);
  EXPECT_FALSE(is_valid_mask(r, 10, 0.85));
  EXPECT_FALSE(is_valid_mask(SegmentResponse{}, 1, 0.0));
}

TEST(ValidMask, TiesPreferLargerThenFirst) {
  const Dims d(20, 20);
  SegmentResponse r;
  r.masks = {mask_with(d, BBox(0, 0, 4, 4), 0.5), mask_with(d, BBox(0, 0, 6, 6), 0.5),
             mask_with(d, BBox(10, 10, 16, 16), 0.5)};
  const auto best = is_valid_mask(r, 1, 0.0);
  ASSERT_TRUE(best);
  EXPECT_EQ(mask_to_bbox(*best), BBox(0, 0, 6, 6));
}

TEST(ValidMask, EmptyMaskNeverValid) {
  SegmentResponse r;
  r.masks = {BinaryMask(Dims(5, 5), 1.0)};
  EXPECT_FALSE(is_valid_mask(r, 0, 0.0));
}

TEST(Instruction, TemplateSubstitution) {
  EXPECT_EQ(render_instruction(kDefaultInstructionTemplate, "the ship"),
            "Draw a red bounding box around: the ship. Do not modify anything else.");
  EXPECT_EQ(render_instruction("{query}/{query}", "{query}"), "{query}/{query}");
  EXPECT_EQ(render_instruction("no slot", "x"), "no slot");
}

TEST(Provenance, NamesRoundTrip) {
  for (auto p : {Provenance::refined_large, Provenance::refined_small, Provenance::refined_fallback_alternate,
                 Provenance::diffusion_fallback, Provenance::none})
    EXPECT_EQ(provenance_from_string(to_string(p)), p);
}

// ---- configuration

TEST(Config, JsonRoundTrip) {
  PipelineConfig c;
  c.p_threshold = 12.5;
  c.crop_margin = 0.1;
  c.enhance.clahe_tile_grid = {4, 6};
  c.cue.min_component_area = 40;
  c.initial_segment_mode = InitialSegmentMode::edited_image_text;
  c.endpoints[Role::editor] = BackendEndpoint{Role::editor, "http://127.0.0.1:1", 3.0, 2};
  const json j = config_to_json(c);
  const PipelineConfig back = config_from_json(j);
  EXPECT_EQ(config_to_json(back), j);
  EXPECT_EQ(back.enhance.clahe_tile_grid.rows, 6);
  EXPECT_EQ(back.endpoints.at(Role::editor).retries, 2);
}

TEST(Config, PartialOverlayKeepsBase) {
  PipelineConfig base;
  base.min_mask_pixels = 77;
  const PipelineConfig c = config_from_json(json::parse(R"({"p_threshold": 5, "cue": {"r_min": 180}})"), base);
  EXPECT_EQ(c.p_threshold, 5.0);
  EXPECT_EQ(c.cue.r_min, 180);
  EXPECT_EQ(c.cue.g_max, RedCueParams{}.g_max);
  EXPECT_EQ(c.min_mask_pixels, 77);
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
  EXPECT_THROW(config_from_json(json::parse(R"({"p_treshold": 5})")), std::invalid_argument);
  EXPECT_THROW(config_from_json(json::parse(R"({"cue": {"red": 1}})")), std::invalid_argument);
  EXPECT_THROW(config_from_json(json::parse(R"({"endpoints": {"painter": {}}})")), std::invalid_argument);
  EXPECT_THROW(config_from_json(json::parse(R"({"p_threshold": "ten"})")), std::invalid_argument);
  try {
    config_from_json(json::parse(R"({"enhance": {"clip": 1}})"));
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("enhance.clip"), std::string::npos);
  }
}

TEST(Config, ValidationRequiresAllRoles) {
  tst::MockFleet fleet(MockConfig{}, MockConfig{});
  PipelineConfig c = fleet.pipeline_config();
  EXPECT_NO_THROW(c.validate());
  c.endpoints.erase(Role::rewriter);
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = fleet.pipeline_config();
  c.p_threshold = 101;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// ---- end to end against mock backends

TEST(Pipeline, OracleBackendsRecoverTruthExactly) {
  const auto tasks = tst::make_tasks(6, Dims(200, 160), 5, 16, 120);
  tst::MockFleet fleet(tst::oracle_config(tasks), MockConfig{});
  const Pipeline p(fleet.pipeline_config());
  for (const auto& t : tst::to_grounding_tasks(tasks)) {
    const GroundingResult r = p.ground(t);
    ASSERT_TRUE(r.final_box) << t.task_id;
    EXPECT_EQ(*r.final_box, *t.ground_truth) << t.task_id;
    EXPECT_TRUE(r.provenance == Provenance::refined_small || r.provenance == Provenance::refined_large);
    EXPECT_EQ(stage_names(r), (std::vector<std::string>{"preprocess", "rewrite", "edit", "cues", "initial_segment",
                                                        "refine", "select", "finalize"}));
  }
}

TEST(Pipeline, RouteFollowsCropSize) {
  const auto small = tst::make_tasks(1, Dims(200, 200), 1, 20, 40);
  const auto large = tst::make_tasks(1, Dims(200, 200), 2, 120, 180);
  auto all = small;
  all.push_back(large[0]);
  all[1].task_id = "big";
  tst::MockFleet fleet(tst::oracle_config(all), MockConfig{});
  const Pipeline p(fleet.pipeline_config());
  const auto gt = tst::to_grounding_tasks(all);
  const GroundingResult rs = p.ground(gt[0]);
  const GroundingResult rl = p.ground(gt[1]);
  EXPECT_EQ(rs.provenance, Provenance::refined_small);
  EXPECT_EQ(rl.provenance, Provenance::refined_large);
  EXPECT_EQ(find_stage(rs, "refine")->routing->chosen, Role::segmenter_small);
  EXPECT_EQ(find_stage(rl, "refine")->routing->chosen, Role::segmenter_large);
  EXPECT_EQ(find_stage(rl, "refine")->calls.front().role, Role::segmenter_large);
}

TEST(Pipeline, FailingSegmentersFallBackToDiffusionCue) {
  const auto tasks = tst::make_tasks(3, Dims(160, 160), 8, 20, 90);
  tst::MockFleet fleet(tst::oracle_config(tasks), failing());
  const Pipeline p(fleet.pipeline_config());
  for (const auto& t : tst::to_grounding_tasks(tasks)) {
    const GroundingResult r = p.ground(t);
    ASSERT_TRUE(r.final_box);
    EXPECT_EQ(*r.final_box, *t.ground_truth);
    EXPECT_EQ(r.provenance, Provenance::diffusion_fallback);
    const StageRecord* rf = find_stage(r, "refine");
    ASSERT_TRUE(rf);
    ASSERT_EQ(rf->fallbacks.size(), 2u);
    const Role chosen = rf->routing->chosen;
    const Role other = chosen == Role::segmenter_small ? Role::segmenter_large : Role::segmenter_small;
    EXPECT_EQ(rf->fallbacks[0].failed, chosen);
    EXPECT_EQ(rf->fallbacks[0].trigger, "invalid_mask");
    EXPECT_EQ(rf->fallbacks[0].next, to_string(other));
    EXPECT_EQ(rf->fallbacks[1].failed, other);
    EXPECT_EQ(rf->fallbacks[1].next, "diffusion_cue");
    ASSERT_EQ(rf->calls.size(), 2u);
    EXPECT_EQ(rf->calls[0].role, chosen);
    EXPECT_EQ(rf->calls[1].role, other);
  }
}

TEST(Pipeline, UnreachableSegmentersAreTransportFallbacks) {
  const auto tasks = tst::make_tasks(1, Dims(120, 120), 4, 20, 60);
  tst::MockFleet fleet(tst::oracle_config(tasks), MockConfig{});
  PipelineConfig cfg = fleet.pipeline_config();
  cfg.endpoints[Role::segmenter_small].base_url = tst::unused_local_url();
  cfg.endpoints[Role::segmenter_large].base_url = tst::unused_local_url();
  const GroundingResult r = ground(tst::to_grounding_tasks(tasks)[0], cfg);
  EXPECT_EQ(r.provenance, Provenance::diffusion_fallback);
  EXPECT_EQ(*r.final_box, tasks[0].truth);
  const StageRecord* rf = find_stage(r, "refine");
  ASSERT_EQ(rf->fallbacks.size(), 2u);
  EXPECT_EQ(rf->fallbacks[0].trigger, "transport_error");
  EXPECT_FALSE(find_stage(r, "initial_segment")->note.empty());
}

TEST(Pipeline, AlternateSegmenterRescuesFailure) {
  const auto tasks = tst::make_tasks(1, Dims(160, 160), 6, 20, 40);  // small route
  tst::MockFleet fleet(tst::oracle_config(tasks), MockConfig{});
  MockBackend dead_small(failing(), {Role::segmenter_small});
  PipelineConfig cfg = fleet.pipeline_config();
  cfg.endpoints[Role::segmenter_small] = dead_small.endpoint(Role::segmenter_small);
  const GroundingResult r = ground(tst::to_grounding_tasks(tasks)[0], cfg);
  EXPECT_EQ(r.provenance, Provenance::refined_fallback_alternate);
  EXPECT_EQ(*r.final_box, tasks[0].truth);
  const StageRecord* rf = find_stage(r, "refine");
  ASSERT_EQ(rf->fallbacks.size(), 1u);
  EXPECT_EQ(rf->fallbacks[0].failed, Role::segmenter_small);
  EXPECT_EQ(rf->fallbacks[0].next, "segmenter_large");
}

TEST(Pipeline, NoCueStopsAfterCueStage) {
  const auto tasks = tst::make_tasks(1, Dims(100, 100), 3, 20, 40);
  tst::MockFleet fleet(MockConfig{}, MockConfig{});  // editor knows no truth: no outline drawn
  const GroundingResult r = ground(tst::to_grounding_tasks(tasks)[0], fleet.pipeline_config());
  EXPECT_FALSE(r.final_box);
  EXPECT_EQ(r.provenance, Provenance::none);
  EXPECT_TRUE(r.cue_boxes.empty());
  EXPECT_EQ(stage_names(r), (std::vector<std::string>{"preprocess", "rewrite", "edit", "cues"}));
}

TEST(Pipeline, EditorFailureIsATaskError) {
  const auto tasks = tst::make_tasks(1, Dims(64, 64), 3, 10, 20);
  tst::MockFleet fleet(failing(), MockConfig{});
  try {
    ground(tst::to_grounding_tasks(tasks)[0], fleet.pipeline_config(1));
    FAIL() << "expected TaskError";
  } catch (const TaskError& e) {
    EXPECT_EQ(e.stage(), "edit");
  }
}

TEST(Pipeline, RewriterFailureDegradesGracefully) {
  const auto tasks = tst::make_tasks(1, Dims(120, 120), 12, 20, 60);
  tst::MockFleet fleet(tst::oracle_config(tasks), MockConfig{});
  PipelineConfig cfg = fleet.pipeline_config();
  cfg.endpoints[Role::rewriter].base_url = tst::unused_local_url();
  const GroundingResult r = ground(tst::to_grounding_tasks(tasks)[0], cfg);
  EXPECT_EQ(*r.final_box, tasks[0].truth);
  EXPECT_FALSE(find_stage(r, "rewrite")->note.empty());
}

TEST(Pipeline, HallucinatedEditGivesWrongBox) {
  const auto tasks = tst::make_tasks(4, Dims(256, 256), 13, 20, 60);
  MockConfig ed = tst::oracle_config(tasks);
  ed.behavior = MockBehavior::hallucinate;
  tst::MockFleet fleet(ed, MockConfig{});
  const Pipeline p(fleet.pipeline_config());
  for (const auto& t : tst::to_grounding_tasks(tasks)) {
    const GroundingResult r = p.ground(t);
    ASSERT_TRUE(r.final_box);
    EXPECT_EQ(iou(*r.final_box, *t.ground_truth), 0.0);
  }
}

TEST(Pipeline, CropMarginWidensRefinementRegion) {
  const auto tasks = tst::make_tasks(1, Dims(200, 200), 21, 40, 60);
  tst::MockFleet fleet(tst::oracle_config(tasks), MockConfig{});
  PipelineConfig cfg = fleet.pipeline_config();
  cfg.crop_margin = 0.25;
  const GroundingResult r = ground(tst::to_grounding_tasks(tasks)[0], cfg);
  const BBox expected = expand_bbox(tasks[0].truth, 0.25, Dims(200, 200));
  EXPECT_EQ(find_stage(r, "refine")->routing->crop, expected);
  EXPECT_EQ(*r.final_box, expected);  // text-mode mock fills the whole crop
}

TEST(Pipeline, TraceDigestIsReproducible) {
  const auto tasks = tst::make_tasks(2, Dims(128, 128), 30, 16, 64);
  auto run = [&] {
    tst::MockFleet fleet(tst::oracle_config(tasks), MockConfig{});
    std::vector<std::string> d;
    for (const auto& t : tst::to_grounding_tasks(tasks)) d.push_back(ground(t, fleet.pipeline_config()).trace.digest());
    return d;
  };
  const auto first = run();
  EXPECT_EQ(first, run());
  EXPECT_NE(first[0], first[1]);
}

TEST(Pipeline, TraceJsonOmitsLatencyByDefault) {
  const auto tasks = tst::make_tasks(1, Dims(96, 96), 31, 16, 40);
  tst::MockFleet fleet(tst::oracle_config(tasks), MockConfig{});
  const GroundingResult r = ground(tst::to_grounding_tasks(tasks)[0], fleet.pipeline_config());
  EXPECT_EQ(r.trace.to_json().dump().find("latency_ms"), std::string::npos);
  EXPECT_NE(r.trace.to_json(true).dump().find("latency_ms"), std::string::npos);
}

TEST(Pipeline, EmptyQueryAndMissingImageAreTaskErrors) {
  tst::MockFleet fleet(MockConfig{}, MockConfig{});
  const Pipeline p(fleet.pipeline_config());
  GroundingTask t;
  t.task_id = "x";
  t.image = std::make_shared<const ImageBuffer>(Dims(16, 16));
  try {
    p.ground(t);
    FAIL();
  } catch (const TaskError& e) {
    EXPECT_EQ(e.stage(), "load");
  }
  t.query = "q";
  t.image.reset();
  t.image_path = "/nonexistent/image.png";
  try {
    p.ground(t);
    FAIL();
  } catch (const TaskError& e) {
    EXPECT_EQ(e.stage(), "load");
  }
}

TEST(Pipeline, EditedImageTextModeSeedsFromTextPrompt) {
  // The mock answers a text prompt with a mask over the whole request raster,
  // so seeding from the edited image yields the full frame.
  const auto tasks = tst::make_tasks(2, Dims(150, 150), 41, 20, 60);
  tst::MockFleet fleet(tst::oracle_config(tasks), MockConfig{});
  PipelineConfig cfg = fleet.pipeline_config();
  cfg.initial_segment_mode = InitialSegmentMode::edited_image_text;
  for (const auto& t : tst::to_grounding_tasks(tasks)) {
    const GroundingResult r = ground(t, cfg);
    ASSERT_TRUE(r.final_box);
    EXPECT_EQ(*r.final_box, BBox(0, 0, 150, 150));
    EXPECT_EQ(r.provenance, Provenance::refined_large);
    const auto it = std::find_if(r.trace.stages.begin(), r.trace.stages.end(),
                                 [](const StageRecord& s) { return s.stage == "initial_segment"; });
    ASSERT_NE(it, r.trace.stages.end());
    ASSERT_EQ(it->candidates.size(), 1u);
    EXPECT_EQ(it->candidates[0].source, "mask");
    EXPECT_EQ(it->candidates[0].box, BBox(0, 0, 150, 150));
  }
}

// ---- batch execution

TEST(Batch, ParallelismDoesNotChangeResults) {
  const auto tasks = tst::make_tasks(24, Dims(128, 96), 50, 12, 70);
  tst::MockFleet fleet(tst::oracle_config(tasks), MockConfig{});
  const auto gt = tst::to_grounding_tasks(tasks);
  const auto serial = ground_batch(gt, fleet.pipeline_config(), 1);
  const auto parallel = ground_batch(gt, fleet.pipeline_config(), 8);
  ASSERT_EQ(serial.size(), gt.size());
  ASSERT_EQ(parallel.size(), gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    ASSERT_TRUE(serial[i].ok() && parallel[i].ok());
    EXPECT_EQ(serial[i].task_id, gt[i].task_id);
    EXPECT_EQ(parallel[i].task_id, gt[i].task_id);
    EXPECT_EQ(serial[i].result->final_box, parallel[i].result->final_box);
    EXPECT_EQ(serial[i].result->trace.digest(), parallel[i].result->trace.digest());
  }
}

TEST(Batch, EmptyInput) {
  tst::MockFleet fleet(MockConfig{}, MockConfig{});
  EXPECT_TRUE(ground_batch({}, fleet.pipeline_config(), 4).empty());
  EXPECT_THROW(ground_batch({}, fleet.pipeline_config(), 0), std::invalid_argument);
}

TEST(Batch, OneBadTaskDoesNotAffectOthers) {
  const auto tasks = tst::make_tasks(5, Dims(100, 100), 60, 16, 50);
  tst::MockFleet fleet(tst::oracle_config(tasks), MockConfig{});
  auto gt = tst::to_grounding_tasks(tasks);
  gt[2].image.reset();
  gt[2].image_path = "/nonexistent.png";
  const auto out = ground_batch(gt, fleet.pipeline_config(), 3);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i == 2) {
      EXPECT_FALSE(out[i].ok());
      EXPECT_EQ(out[i].error_stage, "load");
      EXPECT_FALSE(out[i].error.empty());
    } else {
      ASSERT_TRUE(out[i].ok());
      EXPECT_EQ(*out[i].result->final_box, tasks[i].truth);
    }
  }
}

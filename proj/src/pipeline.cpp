#include "diffusam/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <regex>
#include <thread>

#include "diffusam/codec.hpp"
#include "diffusam/image_io.hpp"

namespace diffusam {

using nlohmann::json;

std::string_view to_string(InitialSegmentMode m) {
  return m == InitialSegmentMode::cue_boxes ? "cue_boxes" : "edited_image_text";
}

InitialSegmentMode initial_segment_mode_from_string(std::string_view s) {
  if (s == "cue_boxes") return InitialSegmentMode::cue_boxes;
  if (s == "edited_image_text") return InitialSegmentMode::edited_image_text;
  throw std::invalid_argument("unknown initial segment mode '" + std::string(s) + "'");
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::refined_large: return "refined_large";
    case Provenance::refined_small: return "refined_small";
    case Provenance::refined_fallback_alternate: return "refined_fallback_alternate";
    case Provenance::diffusion_fallback: return "diffusion_fallback";
    case Provenance::none: return "none";
  }
  return "none";
}

Provenance provenance_from_string(std::string_view s) {
  for (auto p : {Provenance::refined_large, Provenance::refined_small,
                 Provenance::refined_fallback_alternate, Provenance::diffusion_fallback, Provenance::none})
    if (to_string(p) == s) return p;
  throw std::invalid_argument("unknown provenance '" + std::string(s) + "'");
}

void PipelineConfig::validate() const {
  if (!(p_threshold > 0.0 && p_threshold < 100.0))
    throw std::invalid_argument("p_threshold must lie in (0,100)");
  enhance.validate();
  cue.validate();
  if (min_mask_pixels < 0) throw std::invalid_argument("min_mask_pixels must be >= 0");
  if (!(min_mask_score >= 0.0 && min_mask_score <= 1.0))
    throw std::invalid_argument("min_mask_score must lie in [0,1]");
  if (!(crop_margin >= 0.0)) throw std::invalid_argument("crop_margin must be >= 0");
  for (Role r : kAllRoles) {
    auto it = endpoints.find(r);
    if (it == endpoints.end())
      throw std::invalid_argument("no endpoint configured for role " + std::string(to_string(r)));
    if (it->second.role != r)
      throw std::invalid_argument("endpoint under " + std::string(to_string(r)) + " has role " +
                                  std::string(to_string(it->second.role)));
    it->second.validate();
  }
}

// ---------------------------------------------------------------------------
// Trace

nlohmann::json PipelineTrace::to_json(bool include_latency) const {
  json stages_j = json::array();
  for (const auto& s : stages) {
    json j = {{"stage", s.stage}, {"inputs_digest", s.inputs_digest}};
    json calls = json::array();
    for (const auto& c : s.calls) {
      json cj = {{"role", std::string(to_string(c.role))},
                 {"endpoint", c.endpoint},
                 {"request_id", c.request_id},
                 {"attempts", c.attempts}};
      if (!c.error.empty()) cj["error"] = c.error;
      if (include_latency) cj["latency_ms"] = c.latency_ms;
      calls.push_back(std::move(cj));
    }
    j["calls"] = std::move(calls);
    if (s.routing) {
      j["routing"] = {{"crop", wire::box_to_json(s.routing->crop)},
                      {"area_ratio_percent", s.routing->area_ratio_percent},
                      {"chosen", std::string(to_string(s.routing->chosen))}};
    }
    json fb = json::array();
    for (const auto& f : s.fallbacks)
      fb.push_back({{"failed", std::string(to_string(f.failed))},
                    {"trigger", f.trigger},
                    {"next", f.next},
                    {"detail", f.detail}});
    j["fallbacks"] = std::move(fb);
    json cands = json::array();
    for (const auto& c : s.candidates) {
      json cj = {{"cue_index", c.cue_index}, {"box", wire::box_to_json(c.box)}, {"source", c.source}};
      cj["score"] = c.score ? json(*c.score) : json(nullptr);
      cands.push_back(std::move(cj));
    }
    j["candidates"] = std::move(cands);
    if (!s.note.empty()) j["note"] = s.note;
    stages_j.push_back(std::move(j));
  }
  return {{"stages", std::move(stages_j)}};
}

std::string PipelineTrace::digest() const { return sha256_hex(to_json(false).dump()); }

// ---------------------------------------------------------------------------
// Small pieces

std::string strip_directional_keywords(std::string_view query,
                                       const std::vector<std::string>& keywords) {
  std::string out(query);
  if (!keywords.empty()) {
    static const std::regex special(R"([.^$|()\[\]{}*+?\\])");
    std::string alternation;
    for (const auto& k : keywords) {
      if (k.empty()) continue;
      if (!alternation.empty()) alternation += '|';
      alternation += std::regex_replace(k, special, R"(\$&)");
    }
    if (!alternation.empty()) {
      const std::regex words("\\b(?:" + alternation + ")\\b", std::regex::icase);
      out = std::regex_replace(out, words, "");
    }
  }
  static const std::regex spaces(R"(\s+)");
  out = std::regex_replace(out, spaces, " ");
  const auto first = out.find_first_not_of(' ');
  if (first == std::string::npos) return {};
  const auto last = out.find_last_not_of(' ');
  return out.substr(first, last - first + 1);
}

Route select_refiner(const BBox& crop_box, Dims dims, double p_threshold) {
  // Exact in double for integer areas below 2^53.
  return double(crop_box.area()) * 100.0 > p_threshold * double(dims.area()) ? Route::large
                                                                             : Route::small;
}

std::optional<BinaryMask> is_valid_mask(const SegmentResponse& resp, int min_mask_pixels,
                                        double min_mask_score) {
  const BinaryMask* best = nullptr;
  std::int64_t best_count = -1;
  for (const auto& m : resp.masks) {
    const std::int64_t count = m.foreground_count();
    if (count < min_mask_pixels || count == 0 || m.score < min_mask_score) continue;
    if (!best || m.score > best->score || (m.score == best->score && count > best_count)) {
      best = &m;
      best_count = count;
    }
  }
  if (!best) return std::nullopt;
  return *best;
}

std::string render_instruction(std::string_view tmpl, std::string_view query) {
  std::string out(tmpl);
  const std::string_view placeholder = "{query}";
  for (auto pos = out.find(placeholder); pos != std::string::npos;
       pos = out.find(placeholder, pos + query.size()))
    out.replace(pos, placeholder.size(), query);
  return out;
}

namespace {

std::string digest_image(const ImageBuffer& img, std::string_view extra = {}) {
  std::string key = std::to_string(img.width()) + "x" + std::to_string(img.height()) + "\n";
  key.append(extra);
  key.push_back('\n');
  key.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return sha256_hex(key).substr(0, 16);
}

std::string digest_text(std::string_view text) { return sha256_hex(text).substr(0, 16); }

std::string trigger_of(const BackendError& e) {
  return e.kind() == BackendError::Kind::transport ? "transport_error" : "protocol_error";
}

Role alternate_of(Role r) {
  return r == Role::segmenter_large ? Role::segmenter_small : Role::segmenter_large;
}

int provenance_rank(Provenance p) {
  switch (p) {
    case Provenance::refined_large:
    case Provenance::refined_small: return 0;
    case Provenance::refined_fallback_alternate: return 1;
    case Provenance::diffusion_fallback: return 2;
    case Provenance::none: return 3;
  }
  return 3;
}

struct Candidate {
  int cue_index;
  BBox box;
  std::optional<double> score;
  Provenance provenance;
};

// For each cue, the masks attributed to it. One mask per prompt box, in
// prompt order, is the normal case; otherwise each mask goes to the cue its
// bounding box overlaps most.
std::vector<SegmentResponse> attribute_masks(const SegmentResponse& resp, const std::vector<BBox>& cues,
                                             bool positional) {
  std::vector<SegmentResponse> per_cue(cues.size());
  if (positional && resp.masks.size() == cues.size()) {
    for (std::size_t i = 0; i < cues.size(); ++i) per_cue[i].masks.push_back(resp.masks[i]);
    return per_cue;
  }
  for (const auto& m : resp.masks) {
    auto mb = mask_to_bbox(m);
    if (!mb) continue;
    std::size_t best = 0;
    double best_iou = 0.0;
    for (std::size_t i = 0; i < cues.size(); ++i) {
      const double v = iou(*mb, cues[i]);
      if (v > best_iou) {
        best_iou = v;
        best = i;
      }
    }
    if (best_iou > 0.0) per_cue[best].masks.push_back(m);
  }
  return per_cue;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (const auto& [role, ep] : cfg_.endpoints) clients_.emplace(role, BackendClient(ep));
}

const BackendClient& Pipeline::client(Role r) const { return clients_.at(r); }

GroundingResult Pipeline::ground(const GroundingTask& task) const {
  if (task.query.empty()) throw TaskError("load", "empty query");

  std::shared_ptr<const ImageBuffer> original = task.image;
  if (!original) {
    try {
      original = std::make_shared<const ImageBuffer>(load_image(task.image_path));
    } catch (const std::exception& e) {
      throw TaskError("load", e.what());
    }
  }

  GroundingResult result;
  result.task_id = task.task_id;
  auto& stages = result.trace.stages;
  const Dims dims = original->dims;

  // Enhancement runs once; every later stage sees the enhanced raster.
  StageRecord pre{.stage = "preprocess", .inputs_digest = digest_image(*original)};
  ImageBuffer enhanced;
  try {
    enhanced = preprocess(*original, cfg_.enhance);
  } catch (const std::invalid_argument& e) {
    throw TaskError("preprocess", e.what());
  }
  stages.push_back(std::move(pre));

  StageRecord rw{.stage = "rewrite", .inputs_digest = digest_text(task.query)};
  CallRecord rw_call;
  const std::string query = client(Role::rewriter).rewrite_query(task.query, task.task_id, &rw_call);
  if (!rw_call.error.empty()) rw.note = "rewrite failed, using original query";
  rw.calls.push_back(std::move(rw_call));
  stages.push_back(std::move(rw));

  const std::string instruction = render_instruction(cfg_.instruction_template, query);
  StageRecord ed{.stage = "edit", .inputs_digest = digest_image(enhanced, instruction)};
  CallRecord ed_call;
  ImageBuffer edited;
  try {
    edited = client(Role::editor).edit_image(enhanced, instruction, task.task_id, &ed_call);
  } catch (const BackendError& e) {
    throw TaskError("edit", e.what());
  }
  ed.calls.push_back(std::move(ed_call));
  stages.push_back(std::move(ed));

  StageRecord cu{.stage = "cues", .inputs_digest = digest_image(edited)};
  const CueSet cues = extract_cues(edited, cfg_.cue);
  result.cue_boxes = cues.boxes;
  for (std::size_t i = 0; i < cues.boxes.size(); ++i)
    cu.candidates.push_back({int(i), cues.boxes[i], std::nullopt, "cue"});
  if (cues.boxes.empty()) {
    cu.note = "no red highlight found in the edited image";
    stages.push_back(std::move(cu));
    result.provenance = Provenance::none;
    return result;
  }
  stages.push_back(std::move(cu));

  // Initial segmentation constrained to the highlighted regions.
  json cue_json = json::array();
  for (const auto& b : cues.boxes) cue_json.push_back(wire::box_to_json(b));
  StageRecord init{.stage = "initial_segment", .inputs_digest = digest_text(cue_json.dump())};
  SegmentRequest init_req;
  const bool box_prompts = cfg_.initial_segment_mode == InitialSegmentMode::cue_boxes;
  if (box_prompts) {
    init_req.image = enhanced;
    init_req.prompt_mode = PromptMode::boxes;
    init_req.boxes = cues.boxes;
  } else {
    init_req.image = edited;
    init_req.prompt_mode = PromptMode::text;
    init_req.text = query;
  }
  std::vector<SegmentResponse> per_cue(cues.boxes.size());
  CallRecord init_call;
  try {
    per_cue = attribute_masks(client(Role::segmenter_small).segment(init_req, task.task_id, &init_call),
                              cues.boxes, box_prompts);
  } catch (const BackendError& e) {
    init.note = "initial segmentation failed (" + trigger_of(e) + "), keeping cue boxes";
  }
  init.calls.push_back(std::move(init_call));

  std::vector<BBox> seeds;
  for (std::size_t i = 0; i < cues.boxes.size(); ++i) {
    auto best = is_valid_mask(per_cue[i], cfg_.min_mask_pixels, cfg_.min_mask_score);
    auto mb = best ? mask_to_bbox(*best) : std::nullopt;
    auto clamped = mb ? clamp_bbox(*mb, dims) : std::nullopt;
    if (clamped) {
      seeds.push_back(*clamped);
      init.candidates.push_back({int(i), *clamped, best->score, "mask"});
    } else {
      seeds.push_back(cues.boxes[i]);
      init.candidates.push_back({int(i), cues.boxes[i], std::nullopt, "cue"});
    }
  }
  stages.push_back(std::move(init));

  // Per-candidate refinement with size-based routing and the fallback cascade.
  const std::string stripped = strip_directional_keywords(query, cfg_.directional_keywords);
  const std::string refine_text = stripped.empty() ? query : stripped;
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const BBox crop = expand_bbox(seeds[i], cfg_.crop_margin, dims);
    StageRecord rf{.stage = "refine",
                   .inputs_digest = digest_text(wire::box_to_json(crop).dump() + "\n" + refine_text)};
    const Route route = select_refiner(crop, dims, cfg_.p_threshold);
    const Role chosen = route == Route::large ? Role::segmenter_large : Role::segmenter_small;
    rf.routing = RoutingDecision{crop, area_ratio_percent(crop, dims), chosen};

    SegmentRequest req;
    req.image = enhanced.crop(crop);
    req.prompt_mode = PromptMode::text;
    req.text = refine_text;

    std::optional<Candidate> refined;
    const Role order[2] = {chosen, alternate_of(chosen)};
    for (int step = 0; step < 2 && !refined; ++step) {
      const Role role = order[step];
      CallRecord call;
      std::string trigger, detail;
      try {
        auto resp = client(role).segment(req, task.task_id, &call);
        if (auto best = is_valid_mask(resp, cfg_.min_mask_pixels, cfg_.min_mask_score)) {
          const BBox in_crop = *mask_to_bbox(*best);
          const BBox box = remap_to_original(in_crop, Point{crop.x_min(), crop.y_min()});
          const Provenance prov = step == 1 ? Provenance::refined_fallback_alternate
                                  : route == Route::large ? Provenance::refined_large
                                                          : Provenance::refined_small;
          refined = Candidate{int(i), box, best->score, prov};
        } else {
          trigger = "invalid_mask";
          detail = std::to_string(resp.masks.size()) + " mask(s), none valid";
        }
      } catch (const BackendError& e) {
        trigger = trigger_of(e);
        detail = e.what();
      }
      rf.calls.push_back(std::move(call));
      if (!refined)
        rf.fallbacks.push_back({role, trigger,
                                step == 0 ? std::string(to_string(order[1])) : "diffusion_cue", detail});
    }
    Candidate c = refined ? *refined
                          : Candidate{int(i), cues.boxes[i], std::nullopt, Provenance::diffusion_fallback};
    rf.candidates.push_back({c.cue_index, c.box, c.score, std::string(to_string(c.provenance))});
    candidates.push_back(c);
    stages.push_back(std::move(rf));
  }

  // One definitive box: best mask score, refined before fallback, larger
  // area, then cue order.
  StageRecord sel{.stage = "select"};
  json cand_json = json::array();
  for (const auto& c : candidates) {
    cand_json.push_back({wire::box_to_json(c.box), std::string(to_string(c.provenance))});
    sel.candidates.push_back({c.cue_index, c.box, c.score, std::string(to_string(c.provenance))});
  }
  sel.inputs_digest = digest_text(cand_json.dump());
  const double none_score = -std::numeric_limits<double>::infinity();
  const Candidate* winner = &candidates.front();
  for (const auto& c : candidates) {
    const double cs = c.score.value_or(none_score), ws = winner->score.value_or(none_score);
    if (cs != ws) {
      if (cs > ws) winner = &c;
      continue;
    }
    const int cr = provenance_rank(c.provenance), wr = provenance_rank(winner->provenance);
    if (cr != wr) {
      if (cr < wr) winner = &c;
      continue;
    }
    if (c.box.area() > winner->box.area()) winner = &c;
  }
  sel.note = "selected cue " + std::to_string(winner->cue_index);
  stages.push_back(std::move(sel));

  result.final_box = winner->box;
  result.provenance = winner->provenance;
  StageRecord fin{.stage = "finalize", .inputs_digest = digest_text(wire::box_to_json(winner->box).dump())};
  fin.candidates.push_back({winner->cue_index, winner->box, winner->score,
                            std::string(to_string(winner->provenance))});
  stages.push_back(std::move(fin));
  return result;
}

GroundingResult ground(const GroundingTask& task, const PipelineConfig& cfg) {
  return Pipeline(cfg).ground(task);
}

std::vector<TaskOutcome> ground_batch(const std::vector<GroundingTask>& tasks,
                                      const PipelineConfig& cfg, int parallelism) {
  if (parallelism < 1) throw std::invalid_argument("parallelism must be >= 1");
  std::vector<TaskOutcome> out(tasks.size());
  if (tasks.empty()) return out;
  const Pipeline pipeline(cfg);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      TaskOutcome& o = out[i];
      o.task_id = tasks[i].task_id;
      try {
        o.result = pipeline.ground(tasks[i]);
      } catch (const TaskError& e) {
        o.error = e.what();
        o.error_stage = e.stage();
      } catch (const std::exception& e) {
        o.error = e.what();
        o.error_stage = "internal";
      }
    }
  };
  const int workers = int(std::min<std::size_t>(std::size_t(parallelism), tasks.size()));
  std::vector<std::jthread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  return out;
}

}  // namespace diffusam

#include "conformance.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <functional>

#include "json.hpp"

#include "diffusam/codec.hpp"
#include "diffusam/image_io.hpp"

namespace diffusam::testing {

using nlohmann::json;

namespace {

constexpr int kW = 24, kH = 16;

ImageBuffer probe_image() {
  ImageBuffer img(Dims(kW, kH));
  for (int y = 0; y < kH; ++y)
    for (int x = 0; x < kW; ++x) {
      std::uint8_t* p = img.at(x, y);
      p[0] = std::uint8_t(40 + 4 * x);
      p[1] = std::uint8_t(120 + 3 * y);
      p[2] = std::uint8_t(90);
    }
  return img;
}

std::string probe_b64() {
  static const std::string s = base64_encode(encode_png(probe_image()));
  return s;
}

struct Reply {
  int status = 0;  // 0: transport failure
  std::string body;
  std::string error;
};

class Session {
 public:
  explicit Session(const ConformanceOptions& o) : opts_(o) {}

  Reply get(const std::string& path) const {
    auto cli = client();
    return convert(cli.Get(path));
  }

  Reply post(const std::string& path, const std::string& body, const std::string& task_id = "conformance") const {
    const std::string rid = sha256_hex(path + "\n" + task_id + "\n" + body).substr(0, 32);
    return post_with_id(path, body, task_id, rid);
  }

  Reply post_with_id(const std::string& path, const std::string& body, const std::string& task_id,
                     const std::string& rid) const {
    auto cli = client();
    httplib::Headers h{{"x-task-id", task_id}, {"x-request-id", rid}};
    return convert(cli.Post(path, h, body, "application/json"));
  }

 private:
  httplib::Client client() const {
    httplib::Client cli(opts_.base_url);
    const auto secs = std::chrono::duration<double>(opts_.timeout_s);
    cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
    cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
    return cli;
  }

  static Reply convert(const httplib::Result& r) {
    if (!r) return {0, {}, httplib::to_string(r.error())};
    return {r->status, r->body, {}};
  }

  ConformanceOptions opts_;
};

class Recorder {
 public:
  void check(const std::string& endpoint, const std::string& name, const std::function<std::string()>& fn) {
    std::string problem;
    try {
      problem = fn();
    } catch (const std::exception& e) {
      problem = std::string("exception: ") + e.what();
    }
    out_.push_back({endpoint, name, problem.empty(), problem});
  }
  std::vector<ConformanceCheck> take() { return std::move(out_); }

 private:
  std::vector<ConformanceCheck> out_;
};

std::string expect_ok_json(const Reply& r, json& out) {
  if (r.status == 0) return "transport failure: " + r.error;
  if (r.status != 200) return "HTTP " + std::to_string(r.status) + ": " + r.body.substr(0, 200);
  try {
    out = json::parse(r.body);
  } catch (const json::exception& e) {
    return std::string("body is not JSON: ") + e.what();
  }
  if (!out.is_object()) return "body is not a JSON object";
  return {};
}

std::string expect_error_body(const Reply& r, int lo, int hi) {
  if (r.status == 0) return "transport failure: " + r.error;
  if (r.status < lo || r.status > hi)
    return "expected HTTP " + std::to_string(lo) + ".." + std::to_string(hi) + ", got " + std::to_string(r.status);
  json j;
  try {
    j = json::parse(r.body);
  } catch (const json::exception&) {
    return "error reply is not JSON";
  }
  if (!j.is_object() || !j.contains("error") || !j["error"].is_object()) return "error reply lacks an 'error' object";
  const json& e = j["error"];
  if (!e.contains("code") || !e["code"].is_string() || e["code"].get<std::string>().empty())
    return "error object lacks a non-empty string 'code'";
  if (!e.contains("message") || !e["message"].is_string()) return "error object lacks a string 'message'";
  return {};
}

std::string expect_replay(const Session& s, const std::string& path, const std::string& body) {
  const std::string rid = sha256_hex("replay\n" + path + "\n" + body).substr(0, 32);
  const Reply a = s.post_with_id(path, body, "conformance-replay", rid);
  const Reply b = s.post_with_id(path, body, "conformance-replay", rid);
  if (a.status == 0 || b.status == 0) return "transport failure";
  if (a.status != b.status) return "status changed on replay";
  if (a.body != b.body) return "replayed request returned a different body";
  return {};
}

std::string check_masks(const json& j) {
  if (!j.contains("masks") || !j["masks"].is_array()) return "reply lacks a 'masks' array";
  for (std::size_t i = 0; i < j["masks"].size(); ++i) {
    const json& m = j["masks"][i];
    const std::string at = "mask " + std::to_string(i) + ": ";
    if (!m.is_object() || !m.contains("mask_png_b64") || !m["mask_png_b64"].is_string())
      return at + "missing string 'mask_png_b64'";
    if (!m.contains("score") || !m["score"].is_number()) return at + "missing numeric 'score'";
    const double score = m["score"].get<double>();
    if (!(score >= 0.0 && score <= 1.0)) return at + "score outside [0,1]";
    const BinaryMask mask = decode_mask_png(base64_decode(m["mask_png_b64"].get<std::string>()), score);
    if (mask.dims != Dims(kW, kH))
      return at + "dimensions " + std::to_string(mask.dims.width) + "x" + std::to_string(mask.dims.height) +
             " differ from the request image";
  }
  return {};
}

}  // namespace

std::vector<ConformanceCheck> run_conformance(const ConformanceOptions& opts) {
  Session s(opts);
  Recorder rec;
  std::vector<std::string> roles;

  rec.check("/v1/health", "reports status and roles", [&]() -> std::string {
    json j;
    if (auto p = expect_ok_json(s.get("/v1/health"), j); !p.empty()) return p;
    if (j.value("status", "") != "ok") return "status is not \"ok\"";
    if (!j.contains("roles") || !j["roles"].is_array()) return "missing 'roles' array";
    for (const auto& r : j["roles"]) {
      if (!r.is_string()) return "non-string role";
      const auto name = r.get<std::string>();
      if (name != "editor" && name != "segmenter_small" && name != "segmenter_large" && name != "rewriter")
        return "unknown role '" + name + "'";
      roles.push_back(name);
    }
    if (roles.empty()) return "no roles advertised";
    return {};
  });
  auto serves = [&](const char* r) { return std::find(roles.begin(), roles.end(), r) != roles.end(); };

  rec.check("(any)", "unknown path answers 404 with an error body",
            [&] { return expect_error_body(s.post("/v1/does-not-exist", "{}"), 404, 404); });

  if (serves("editor")) {
    const std::string body = json{{"image_png_b64", probe_b64()}, {"instruction", "Draw a red box."}}.dump();
    rec.check("/v1/edit", "returns an image of the input size", [&]() -> std::string {
      json j;
      if (auto p = expect_ok_json(s.post("/v1/edit", body), j); !p.empty()) return p;
      if (!j.contains("image_png_b64") || !j["image_png_b64"].is_string()) return "missing string 'image_png_b64'";
      const ImageBuffer img = decode_png(base64_decode(j["image_png_b64"].get<std::string>()));
      if (img.dims != Dims(kW, kH)) return "edited image has different dimensions";
      return {};
    });
    rec.check("/v1/edit", "replay with the same x-request-id is byte-identical",
              [&] { return expect_replay(s, "/v1/edit", body); });
    rec.check("/v1/edit", "missing instruction is a 4xx error body", [&] {
      return expect_error_body(s.post("/v1/edit", json{{"image_png_b64", probe_b64()}}.dump()), 400, 499);
    });
  }

  if (serves("segmenter_small") || serves("segmenter_large")) {
    const std::string boxes =
        json{{"image_png_b64", probe_b64()}, {"prompt_mode", "boxes"}, {"boxes", {{2, 2, 10, 9}, {12, 4, 22, 14}}}}
            .dump();
    const std::string text =
        json{{"image_png_b64", probe_b64()}, {"prompt_mode", "text"}, {"text", "the field"}}.dump();
    rec.check("/v1/segment", "boxes mode masks match the request", [&]() -> std::string {
      json j;
      if (auto p = expect_ok_json(s.post("/v1/segment", boxes), j); !p.empty()) return p;
      return check_masks(j);
    });
    rec.check("/v1/segment", "text mode masks match the request", [&]() -> std::string {
      json j;
      if (auto p = expect_ok_json(s.post("/v1/segment", text), j); !p.empty()) return p;
      return check_masks(j);
    });
    rec.check("/v1/segment", "replay with the same x-request-id is byte-identical",
              [&] { return expect_replay(s, "/v1/segment", boxes); });
    rec.check("/v1/segment", "malformed JSON is a 4xx error body",
              [&] { return expect_error_body(s.post("/v1/segment", "{not json"), 400, 499); });
    rec.check("/v1/segment", "unknown prompt_mode is a 4xx error body", [&] {
      const std::string bad = json{{"image_png_b64", probe_b64()}, {"prompt_mode", "points"}}.dump();
      return expect_error_body(s.post("/v1/segment", bad), 400, 499);
    });
  }

  if (serves("rewriter")) {
    const std::string body = json{{"query", "Find the ship near the harbor."}}.dump();
    rec.check("/v1/rewrite", "returns a non-empty query", [&]() -> std::string {
      json j;
      if (auto p = expect_ok_json(s.post("/v1/rewrite", body), j); !p.empty()) return p;
      if (!j.contains("query") || !j["query"].is_string()) return "missing string 'query'";
      if (j["query"].get<std::string>().empty()) return "empty query";
      return {};
    });
    rec.check("/v1/rewrite", "replay with the same x-request-id is byte-identical",
              [&] { return expect_replay(s, "/v1/rewrite", body); });
    rec.check("/v1/rewrite", "missing query is a 4xx error body",
              [&] { return expect_error_body(s.post("/v1/rewrite", "{}"), 400, 499); });
  }
  return rec.take();
}

std::vector<ConformanceCheck> failures(const std::vector<ConformanceCheck>& checks) {
  std::vector<ConformanceCheck> out;
  std::copy_if(checks.begin(), checks.end(), std::back_inserter(out), [](const auto& c) { return !c.passed; });
  return out;
}

}  // namespace diffusam::testing

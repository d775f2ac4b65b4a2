#include "diffusam/backends.hpp"

#include <httplib.h>

#include <chrono>
#include <thread>

#include "diffusam/codec.hpp"
#include "diffusam/image_io.hpp"

namespace diffusam {

using nlohmann::json;

std::string_view to_string(Role r) {
  switch (r) {
    case Role::editor: return "editor";
    case Role::segmenter_small: return "segmenter_small";
    case Role::segmenter_large: return "segmenter_large";
    case Role::rewriter: return "rewriter";
  }
  return "unknown";
}

Role role_from_string(std::string_view s) {
  for (Role r : kAllRoles)
    if (to_string(r) == s) return r;
  throw std::invalid_argument("unknown backend role '" + std::string(s) + "'");
}

std::string_view to_string(PromptMode m) { return m == PromptMode::text ? "text" : "boxes"; }

void BackendEndpoint::validate() const {
  if (base_url.empty()) throw std::invalid_argument(std::string(to_string(role)) + ": empty base_url");
  if (!(timeout_s > 0.0)) throw std::invalid_argument(std::string(to_string(role)) + ": timeout must be > 0");
  if (retries < 0) throw std::invalid_argument(std::string(to_string(role)) + ": retries must be >= 0");
}

BackendError::BackendError(Kind kind, Role role, std::string message, int http_status,
                           std::string code)
    : std::runtime_error(std::string(to_string(role)) + ": " + message),
      kind_(kind),
      role_(role),
      http_status_(http_status),
      code_(std::move(code)) {}

void SegmentRequest::validate() const {
  if (prompt_mode == PromptMode::text) {
    if (!text || text->empty()) throw std::invalid_argument("segment: text mode requires 'text'");
    if (!boxes.empty()) throw std::invalid_argument("segment: text mode must not carry 'boxes'");
  } else {
    if (boxes.empty()) throw std::invalid_argument("segment: boxes mode requires 'boxes'");
    if (text) throw std::invalid_argument("segment: boxes mode must not carry 'text'");
  }
}

// ---------------------------------------------------------------------------
// Wire encodings

namespace wire {

json box_to_json(const BBox& b) { return json::array({b.x_min(), b.y_min(), b.x_max(), b.y_max()}); }

BBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4)
    throw std::invalid_argument("box must be an array [x_min, y_min, x_max, y_max]");
  for (const auto& v : j)
    if (!v.is_number_integer()) throw std::invalid_argument("box coordinates must be integers");
  auto b = BBox::make(j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>());
  if (!b) throw std::invalid_argument("box " + j.dump() + " is empty (need x_min < x_max, y_min < y_max)");
  return *b;
}

namespace {

ImageBuffer image_from_b64(const json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_string())
    throw std::invalid_argument(std::string("missing string field '") + field + "'");
  const auto bytes = base64_decode(j[field].get_ref<const std::string&>());
  return decode_png(bytes);
}

}  // namespace

json segment_request_to_json(const SegmentRequest& req) {
  json j = {{"image_png_b64", base64_encode(encode_png(req.image))},
            {"prompt_mode", std::string(to_string(req.prompt_mode))}};
  if (req.text) j["text"] = *req.text;
  if (req.prompt_mode == PromptMode::boxes) {
    j["boxes"] = json::array();
    for (const auto& b : req.boxes) j["boxes"].push_back(box_to_json(b));
  }
  return j;
}

SegmentRequest segment_request_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("request body must be a JSON object");
  SegmentRequest req;
  req.image = image_from_b64(j, "image_png_b64");
  if (!j.contains("prompt_mode") || !j["prompt_mode"].is_string())
    throw std::invalid_argument("missing string field 'prompt_mode'");
  const auto mode = j["prompt_mode"].get<std::string>();
  if (mode == "text") {
    req.prompt_mode = PromptMode::text;
  } else if (mode == "boxes") {
    req.prompt_mode = PromptMode::boxes;
  } else {
    throw std::invalid_argument("prompt_mode must be \"text\" or \"boxes\"");
  }
  if (j.contains("text") && !j["text"].is_null()) {
    if (!j["text"].is_string()) throw std::invalid_argument("'text' must be a string");
    req.text = j["text"].get<std::string>();
  }
  if (j.contains("boxes") && !j["boxes"].is_null()) {
    if (!j["boxes"].is_array()) throw std::invalid_argument("'boxes' must be an array");
    for (const auto& b : j["boxes"]) req.boxes.push_back(box_from_json(b));
  }
  req.validate();
  return req;
}

json segment_response_to_json(const SegmentResponse& resp) {
  json masks = json::array();
  for (const auto& m : resp.masks)
    masks.push_back({{"mask_png_b64", base64_encode(encode_mask_png(m))}, {"score", m.score}});
  return {{"masks", masks}};
}

SegmentResponse segment_response_from_json(const json& j) {
  if (!j.is_object() || !j.contains("masks") || !j["masks"].is_array())
    throw std::invalid_argument("response lacks a 'masks' array");
  SegmentResponse resp;
  for (const auto& m : j["masks"]) {
    if (!m.is_object() || !m.contains("mask_png_b64") || !m["mask_png_b64"].is_string())
      throw std::invalid_argument("mask entry lacks 'mask_png_b64'");
    if (!m.contains("score") || !m["score"].is_number())
      throw std::invalid_argument("mask entry lacks numeric 'score'");
    const double score = m["score"].get<double>();
    if (!(score >= 0.0 && score <= 1.0)) throw std::invalid_argument("mask score outside [0,1]");
    resp.masks.push_back(decode_mask_png(base64_decode(m["mask_png_b64"].get<std::string>()), score));
  }
  return resp;
}

json error_body(std::string_view code, std::string_view message) {
  return {{"error", {{"code", std::string(code)}, {"message", std::string(message)}}}};
}

std::string request_id(Role role, std::string_view path, std::string_view task_id,
                       std::string_view body) {
  std::string key;
  key.reserve(body.size() + 128);
  key.append(to_string(role)).push_back('\n');
  key.append(path).push_back('\n');
  key.append(task_id).push_back('\n');
  key.append(body);
  return sha256_hex(key).substr(0, 32);
}

}  // namespace wire

// ---------------------------------------------------------------------------
// Client

BackendClient::BackendClient(BackendEndpoint ep) : ep_(std::move(ep)) { ep_.validate(); }

namespace {

void set_timeouts(httplib::Client& cli, double timeout_s) {
  const auto us = std::chrono::microseconds(std::int64_t(timeout_s * 1e6));
  const auto sec = std::chrono::duration_cast<std::chrono::seconds>(us);
  const auto rem = us - sec;
  cli.set_connection_timeout(time_t(sec.count()), long(rem.count()));
  cli.set_read_timeout(time_t(sec.count()), long(rem.count()));
  cli.set_write_timeout(time_t(sec.count()), long(rem.count()));
}

std::string describe_error_body(const std::string& body, std::string& code) {
  try {
    auto j = json::parse(body);
    if (j.contains("error") && j["error"].is_object()) {
      code = j["error"].value("code", "");
      return j["error"].value("message", "");
    }
  } catch (const json::exception&) {
  }
  return body.substr(0, 200);
}

}  // namespace

json BackendClient::post(std::string_view path, const json& body, const std::string& task_id,
                         CallRecord* record) const {
  const std::string payload = body.dump();
  const std::string rid = wire::request_id(ep_.role, path, task_id, payload);
  CallRecord local;
  CallRecord& rec = record ? *record : local;
  rec.role = ep_.role;
  rec.endpoint = std::string(path);
  rec.request_id = rid;
  rec.attempts = 0;
  rec.error.clear();

  const httplib::Headers headers{{"x-task-id", task_id}, {"x-request-id", rid}};
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };

  std::string last_error;
  int last_status = 0;
  std::string last_code;
  for (int attempt = 0; attempt <= ep_.retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(20 * attempt));
    ++rec.attempts;
    httplib::Client cli(ep_.base_url);
    set_timeouts(cli, ep_.timeout_s);
    auto res = cli.Post(std::string(path), headers, payload, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      last_status = 0;
      continue;
    }
    if (res->status >= 500) {
      last_status = res->status;
      last_error = "HTTP " + std::to_string(res->status) + ": " + describe_error_body(res->body, last_code);
      continue;
    }
    if (res->status != 200) {
      std::string code;
      auto msg = describe_error_body(res->body, code);
      rec.latency_ms = elapsed_ms();
      rec.error = "HTTP " + std::to_string(res->status) + ": " + msg;
      throw BackendError(BackendError::Kind::protocol, ep_.role, rec.error, res->status, code);
    }
    rec.latency_ms = elapsed_ms();
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      rec.error = std::string("malformed JSON response: ") + e.what();
      throw BackendError(BackendError::Kind::protocol, ep_.role, rec.error, res->status);
    }
  }
  rec.latency_ms = elapsed_ms();
  rec.error = last_error + " (after " + std::to_string(rec.attempts) + " attempts)";
  throw BackendError(BackendError::Kind::transport, ep_.role, rec.error, last_status, last_code);
}

ImageBuffer BackendClient::edit_image(const ImageBuffer& image, const std::string& instruction,
                                      const std::string& task_id, CallRecord* record) const {
  const json body = {{"image_png_b64", base64_encode(encode_png(image))}, {"instruction", instruction}};
  const json reply = post("/v1/edit", body, task_id, record);
  ImageBuffer edited;
  try {
    if (!reply.contains("image_png_b64") || !reply["image_png_b64"].is_string())
      throw std::invalid_argument("response lacks 'image_png_b64'");
    edited = decode_png(base64_decode(reply["image_png_b64"].get<std::string>()));
  } catch (const std::exception& e) {
    if (record) record->error = e.what();
    throw BackendError(BackendError::Kind::protocol, ep_.role, e.what(), 200);
  }
  if (edited.dims != image.dims) {
    const std::string msg = "edited image is " + std::to_string(edited.width()) + "x" +
                            std::to_string(edited.height()) + ", expected " +
                            std::to_string(image.width()) + "x" + std::to_string(image.height());
    if (record) record->error = msg;
    throw BackendError(BackendError::Kind::protocol, ep_.role, msg, 200, "dimension_mismatch");
  }
  return edited;
}

SegmentResponse BackendClient::segment(const SegmentRequest& req, const std::string& task_id,
                                       CallRecord* record) const {
  req.validate();
  const json reply = post("/v1/segment", wire::segment_request_to_json(req), task_id, record);
  SegmentResponse resp;
  try {
    resp = wire::segment_response_from_json(reply);
  } catch (const std::exception& e) {
    if (record) record->error = e.what();
    throw BackendError(BackendError::Kind::protocol, ep_.role, e.what(), 200);
  }
  for (const auto& m : resp.masks) {
    if (m.dims != req.image.dims) {
      const std::string msg = "mask is " + std::to_string(m.dims.width) + "x" +
                              std::to_string(m.dims.height) + ", request image is " +
                              std::to_string(req.image.width()) + "x" +
                              std::to_string(req.image.height());
      if (record) record->error = msg;
      throw BackendError(BackendError::Kind::protocol, ep_.role, msg, 200, "dimension_mismatch");
    }
  }
  return resp;
}

std::string BackendClient::rewrite_query(const std::string& query, const std::string& task_id,
                                         CallRecord* record) const {
  CallRecord local;
  CallRecord& rec = record ? *record : local;
  try {
    const json reply = post("/v1/rewrite", json{{"query", query}}, task_id, &rec);
    if (!reply.contains("query") || !reply["query"].is_string())
      throw std::invalid_argument("response lacks string 'query'");
    auto out = reply["query"].get<std::string>();
    if (out.empty()) throw std::invalid_argument("rewriter returned an empty query");
    return out;
  } catch (const std::exception& e) {
    if (rec.error.empty()) rec.error = e.what();
    return query;
  }
}

HealthStatus BackendClient::health() const {
  HealthStatus h;
  httplib::Client cli(ep_.base_url);
  set_timeouts(cli, ep_.timeout_s);
  auto res = cli.Get("/v1/health");
  if (!res) {
    h.error = "transport failure: " + httplib::to_string(res.error());
    return h;
  }
  if (res->status != 200) {
    h.error = "HTTP " + std::to_string(res->status);
    return h;
  }
  try {
    auto j = json::parse(res->body);
    for (const auto& r : j.at("roles")) h.roles.push_back(r.get<std::string>());
    const bool status_ok = j.at("status") == "ok";
    const bool serves_role =
        std::find(h.roles.begin(), h.roles.end(), to_string(ep_.role)) != h.roles.end();
    h.ok = status_ok && serves_role;
    if (!status_ok) h.error = "status is not ok";
    else if (!serves_role) h.error = "role " + std::string(to_string(ep_.role)) + " not served";
  } catch (const json::exception& e) {
    h.error = std::string("malformed health body: ") + e.what();
  }
  return h;
}

}  // namespace diffusam

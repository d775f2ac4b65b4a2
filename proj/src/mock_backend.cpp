#include "diffusam/mock_backend.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <deque>
#include <iostream>
#include <mutex>
#include <random>
#include <thread>
#include <unordered_map>

#include "diffusam/codec.hpp"
#include "diffusam/image_io.hpp"
#include "diffusam/raster_draw.hpp"

namespace diffusam {

using nlohmann::json;

std::string_view to_string(MockBehavior b) {
  switch (b) {
    case MockBehavior::oracle: return "oracle";
    case MockBehavior::jitter: return "jitter";
    case MockBehavior::hallucinate: return "hallucinate";
    case MockBehavior::fail: return "fail";
  }
  return "unknown";
}

MockBehavior mock_behavior_from_string(std::string_view s) {
  for (auto b : {MockBehavior::oracle, MockBehavior::jitter, MockBehavior::hallucinate, MockBehavior::fail})
    if (to_string(b) == s) return b;
  throw std::invalid_argument("unknown mock behavior '" + std::string(s) + "'");
}

void MockConfig::validate() const {
  if (jitter_px < 0) throw std::invalid_argument("jitter_px must be >= 0");
  if (!(shrink > 0.0 && shrink <= 1.0)) throw std::invalid_argument("shrink must lie in (0,1]");
  if (!(fail_rate >= 0.0 && fail_rate <= 1.0)) throw std::invalid_argument("fail_rate must lie in [0,1]");
  if (stroke_px < 1) throw std::invalid_argument("stroke_px must be >= 1");
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Generator keyed only by request content, never by call order.
std::mt19937_64 keyed_rng(std::uint64_t seed, std::string_view task_id, std::string_view salt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(h, std::to_string(seed));
  h = fnv1a(h, "\x1f");
  h = fnv1a(h, task_id);
  h = fnv1a(h, "\x1f");
  h = fnv1a(h, salt);
  return std::mt19937_64(h);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + int(rng() % std::uint64_t(hi - lo + 1));
}

double uniform_unit(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

BBox jitter_box(const BBox& b, int px, Dims d, std::mt19937_64& rng) {
  const int x0 = b.x_min() + uniform_int(rng, -px, px);
  const int y0 = b.y_min() + uniform_int(rng, -px, px);
  const int x1 = b.x_max() + uniform_int(rng, -px, px);
  const int y1 = b.y_max() + uniform_int(rng, -px, px);
  auto j = BBox::make(x0, y0, x1, y1);
  auto c = j ? clamp_bbox(*j, d) : std::nullopt;
  return c ? *c : b;
}

MockReply json_reply(int status, const json& j) { return {status, j.dump()}; }

MockReply error_reply(int status, std::string_view code, std::string_view message) {
  return json_reply(status, wire::error_body(code, message));
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool ends_with_ci(const std::string& s, const std::string& suffix) {
  if (suffix.size() > s.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(), [](char a, char b) {
    return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
  });
}

}  // namespace

BBox shrink_box(const BBox& b, double shrink) {
  const int w = std::max(1, int(std::lround(b.width() * shrink)));
  const int h = std::max(1, int(std::lround(b.height() * shrink)));
  const int x0 = b.x_min() + (b.width() - w) / 2;
  const int y0 = b.y_min() + (b.height() - h) / 2;
  return BBox(x0, y0, x0 + w, y0 + h);
}

MaybeBox hallucinated_box(const MaybeBox& truth, Dims d, std::uint64_t seed,
                          const std::string& task_id) {
  auto rng = keyed_rng(seed, task_id, "hallucinate");
  int w = truth ? truth->width() : std::max(1, d.width / 8);
  int h = truth ? truth->height() : std::max(1, d.height / 8);
  w = std::min(w, d.width);
  h = std::min(h, d.height);
  while (true) {
    for (int attempt = 0; attempt < 256; ++attempt) {
      const int x = uniform_int(rng, 0, d.width - w);
      const int y = uniform_int(rng, 0, d.height - h);
      BBox cand(x, y, x + w, y + h);
      if (!truth || intersection_area(cand, *truth) == 0) return cand;
    }
    if (w == 1 && h == 1) return std::nullopt;
    w = std::max(1, w / 2);
    h = std::max(1, h / 2);
  }
}

// ---------------------------------------------------------------------------
// Responder

MockResponder::MockResponder(MockConfig cfg, std::vector<Role> roles)
    : cfg_(std::move(cfg)), roles_(std::move(roles)) {
  cfg_.validate();
  if (roles_.empty()) roles_.assign(std::begin(kAllRoles), std::end(kAllRoles));
}

bool MockResponder::serves(Role r) const {
  return std::find(roles_.begin(), roles_.end(), r) != roles_.end();
}

bool MockResponder::injected_failure(const std::string& path, const std::string& task_id,
                                     const std::string& body) const {
  if (cfg_.fail_rate <= 0.0) return false;
  auto rng = keyed_rng(cfg_.seed, task_id, path + "\x1f" + sha256_hex(body));
  return uniform_unit(rng) < cfg_.fail_rate;
}

MockReply MockResponder::handle(const std::string& method, const std::string& path,
                                const std::string& task_id, const std::string& body) const {
  try {
    if (path == "/v1/health") {
      if (method != "GET") return error_reply(405, "method_not_allowed", "use GET");
      json roles = json::array();
      for (Role r : roles_) roles.push_back(std::string(to_string(r)));
      return json_reply(200, {{"status", "ok"}, {"roles", roles}});
    }
    const bool known = path == "/v1/edit" || path == "/v1/segment" || path == "/v1/rewrite";
    if (!known) return error_reply(404, "not_found", "no such endpoint: " + path);
    if (method != "POST") return error_reply(405, "method_not_allowed", "use POST");
    if (path == "/v1/edit") return edit(task_id, body);
    if (path == "/v1/segment") return segment(task_id, body);
    return rewrite(task_id, body);
  } catch (const json::exception& e) {
    return error_reply(400, "bad_request", e.what());
  } catch (const std::invalid_argument& e) {
    return error_reply(400, "bad_request", e.what());
  } catch (const ImageIoError& e) {
    return error_reply(400, "bad_image", e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

MockReply MockResponder::edit(const std::string& task_id, const std::string& body) const {
  if (!serves(Role::editor)) return error_reply(404, "role_not_served", "editor role not served");
  const json req = json::parse(body);
  if (!req.is_object() || !req.contains("image_png_b64") || !req["image_png_b64"].is_string())
    return error_reply(400, "bad_request", "missing string field 'image_png_b64'");
  if (!req.contains("instruction") || !req["instruction"].is_string())
    return error_reply(400, "bad_request", "missing string field 'instruction'");
  ImageBuffer img = decode_png(base64_decode(req["image_png_b64"].get<std::string>()));

  if (cfg_.behavior == MockBehavior::fail || injected_failure("/v1/edit", task_id, body))
    return error_reply(503, "unavailable", "editor failure injected by mock");

  MaybeBox truth;
  if (auto it = cfg_.truth_table.find(task_id); it != cfg_.truth_table.end())
    truth = clamp_bbox(it->second, img.dims);

  MaybeBox drawn;
  switch (cfg_.behavior) {
    case MockBehavior::oracle: drawn = truth; break;
    case MockBehavior::jitter:
      if (truth) {
        auto rng = keyed_rng(cfg_.seed, task_id, "edit-jitter");
        drawn = jitter_box(*truth, cfg_.jitter_px, img.dims, rng);
      }
      break;
    case MockBehavior::hallucinate:
      drawn = hallucinated_box(truth, img.dims, cfg_.seed, task_id);
      break;
    case MockBehavior::fail: break;
  }
  if (drawn) draw_rect_outline(img, *drawn, cfg_.stroke_px, kRed);
  return json_reply(200, {{"image_png_b64", base64_encode(encode_png(img))}});
}

MockReply MockResponder::segment(const std::string& task_id, const std::string& body) const {
  if (!serves(Role::segmenter_small) && !serves(Role::segmenter_large))
    return error_reply(404, "role_not_served", "no segmenter role served");
  const SegmentRequest req = wire::segment_request_from_json(json::parse(body));

  SegmentResponse resp;
  if (cfg_.behavior == MockBehavior::fail || injected_failure("/v1/segment", task_id, body))
    return json_reply(200, wire::segment_response_to_json(resp));

  const double score = cfg_.behavior == MockBehavior::hallucinate ? 0.6 : 0.9;
  const Dims d = req.image.dims;
  auto footprint_mask = [&](const BBox& b) {
    BinaryMask m(d, score);
    for (int y = b.y_min(); y < b.y_max(); ++y)
      for (int x = b.x_min(); x < b.x_max(); ++x) m.set(x, y);
    return m;
  };

  if (req.prompt_mode == PromptMode::boxes) {
    for (std::size_t i = 0; i < req.boxes.size(); ++i) {
      auto prompt = clamp_bbox(req.boxes[i], d);
      if (!prompt) continue;
      BBox b = *prompt;
      if (cfg_.behavior == MockBehavior::jitter) {
        auto rng = keyed_rng(cfg_.seed, task_id,
                             "segment-jitter\x1f" + wire::box_to_json(b).dump() + "\x1f" + std::to_string(i));
        b = jitter_box(b, cfg_.jitter_px, d, rng);
      }
      resp.masks.push_back(footprint_mask(shrink_box(b, cfg_.shrink)));
    }
  } else {
    // Text prompts arrive on crops around the object: the mock segments the
    // whole request raster.
    resp.masks.push_back(footprint_mask(BBox(0, 0, d.width, d.height)));
  }
  return json_reply(200, wire::segment_response_to_json(resp));
}

MockReply MockResponder::rewrite(const std::string& task_id, const std::string& body) const {
  if (!serves(Role::rewriter)) return error_reply(404, "role_not_served", "rewriter role not served");
  const json req = json::parse(body);
  if (!req.is_object() || !req.contains("query") || !req["query"].is_string())
    return error_reply(400, "bad_request", "missing string field 'query'");
  std::string query = req["query"].get<std::string>();
  if (query.empty()) return error_reply(400, "bad_request", "'query' must be non-empty");
  if (cfg_.behavior == MockBehavior::fail || injected_failure("/v1/rewrite", task_id, body))
    return error_reply(503, "unavailable", "rewriter failure injected by mock");

  std::string out = trim(query);
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& raw : cfg_.rewrite_suffixes) {
      const std::string suffix = trim(raw);
      if (!suffix.empty() && out.size() > suffix.size() && ends_with_ci(out, suffix)) {
        out = trim(out.substr(0, out.size() - suffix.size()));
        changed = true;
      }
    }
  }
  if (out.empty()) out = query;
  return json_reply(200, {{"query", out}});
}

// ---------------------------------------------------------------------------
// Server

struct MockBackend::Impl {
  MockResponder responder;
  std::string host;
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<std::size_t> served{0};
  std::atomic<bool> stopped{false};

  std::mutex cache_mu;
  std::unordered_map<std::string, MockReply> cache;
  std::deque<std::string> cache_order;
  static constexpr std::size_t kCacheLimit = 4096;

  Impl(MockConfig cfg, std::vector<Role> roles, std::string h)
      : responder(std::move(cfg), std::move(roles)), host(std::move(h)) {}

  void serve(const httplib::Request& req, httplib::Response& res) {
    const std::string task_id = req.get_header_value("x-task-id");
    const std::string rid = req.get_header_value("x-request-id");
    MockReply reply;
    bool cached = false;
    if (!rid.empty()) {
      std::lock_guard lock(cache_mu);
      if (auto it = cache.find(rid); it != cache.end()) {
        reply = it->second;
        cached = true;
      }
    }
    if (!cached) {
      reply = responder.handle(req.method, req.path, task_id, req.body);
      if (!rid.empty()) {
        std::lock_guard lock(cache_mu);
        if (cache.emplace(rid, reply).second) {
          cache_order.push_back(rid);
          if (cache_order.size() > kCacheLimit) {
            cache.erase(cache_order.front());
            cache_order.pop_front();
          }
        }
      }
    }
    ++served;
    if (responder.config().log_requests) {
      std::cerr << "[mock] " << req.method << ' ' << req.path << " role=" << role_for(req.path)
                << " task=" << (task_id.empty() ? "-" : task_id) << " status=" << reply.status
                << (cached ? " (replay)" : "") << '\n';
    }
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  }

  static std::string_view role_for(const std::string& path) {
    if (path == "/v1/edit") return "editor";
    if (path == "/v1/segment") return "segmenter";
    if (path == "/v1/rewrite") return "rewriter";
    return "-";
  }
};

MockBackend::MockBackend(MockConfig cfg, std::vector<Role> roles, std::string host, int port)
    : impl_(std::make_unique<Impl>(std::move(cfg), std::move(roles), std::move(host))) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) { impl_->serve(req, res); };
  const std::string any = R"(/.*)";
  impl_->server.Get(any, handler);
  impl_->server.Post(any, handler);
  impl_->server.Put(any, handler);
  impl_->server.Delete(any, handler);
  // Oversized or otherwise rejected requests still get the JSON error shape.
  impl_->server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    res.set_content(wire::error_body(res.status == 404 ? "not_found" : "http_error",
                                     httplib::status_message(res.status))
                        .dump(),
                    "application/json");
  });

  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(impl_->host);
  } else {
    impl_->port = impl_->server.bind_to_port(impl_->host, port) ? port : -1;
  }
  if (impl_->port <= 0)
    throw BindError("mock backend: cannot bind " + impl_->host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

MockBackend::~MockBackend() {
  stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int MockBackend::port() const { return impl_->port; }

std::string MockBackend::base_url() const {
  return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

BackendEndpoint MockBackend::endpoint(Role role, double timeout_s, int retries) const {
  return BackendEndpoint{role, base_url(), timeout_s, retries};
}

std::size_t MockBackend::requests_served() const { return impl_->served.load(); }

void MockBackend::stop() {
  if (impl_->stopped.exchange(true)) return;
  impl_->server.stop();
}

void MockBackend::wait() {
  while (!impl_->stopped.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace diffusam

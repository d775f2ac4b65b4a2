#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "diffusam/geometry.hpp"
#include "diffusam/imaging.hpp"

namespace diffusam {

/// The four model roles that live behind the HTTP boundary.
enum class Role { editor, segmenter_small, segmenter_large, rewriter };

inline constexpr Role kAllRoles[] = {Role::editor, Role::segmenter_small, Role::segmenter_large,
                                     Role::rewriter};

std::string_view to_string(Role r);
/// Throws std::invalid_argument for unknown names.
Role role_from_string(std::string_view s);

struct BackendEndpoint {
  Role role = Role::editor;
  std::string base_url;
  double timeout_s = 30.0;
  int retries = 1;

  void validate() const;
};

/// Failure talking to a backend. `transport` covers connection failures,
/// timeouts and 5xx replies (retried); `protocol` covers 4xx replies and
/// malformed or inconsistent bodies (never retried).
class BackendError : public std::runtime_error {
 public:
  enum class Kind { transport, protocol };

  BackendError(Kind kind, Role role, std::string message, int http_status = 0,
               std::string code = {});

  Kind kind() const { return kind_; }
  Role role() const { return role_; }
  int http_status() const { return http_status_; }
  const std::string& code() const { return code_; }

 private:
  Kind kind_;
  Role role_;
  int http_status_;
  std::string code_;
};

enum class PromptMode { text, boxes };

std::string_view to_string(PromptMode m);

struct SegmentRequest {
  ImageBuffer image;
  PromptMode prompt_mode = PromptMode::boxes;
  std::optional<std::string> text;
  std::vector<BBox> boxes;

  /// Exactly the fields required by prompt_mode must be present.
  void validate() const;
};

struct SegmentResponse {
  std::vector<BinaryMask> masks;  // each carries its score
};

/// Bookkeeping for one logical backend call (including retries).
struct CallRecord {
  Role role = Role::editor;
  std::string endpoint;  // "/v1/segment", ...
  std::string request_id;
  double latency_ms = 0.0;
  int attempts = 0;
  std::string error;  // empty on success
};

struct HealthStatus {
  bool ok = false;
  std::vector<std::string> roles;
  std::string error;
};

// Wire encodings shared by the client and the mock server.
namespace wire {

nlohmann::json box_to_json(const BBox& b);
/// Throws std::invalid_argument for anything but four ints forming a valid box.
BBox box_from_json(const nlohmann::json& j);

nlohmann::json segment_request_to_json(const SegmentRequest& req);
SegmentRequest segment_request_from_json(const nlohmann::json& j);

nlohmann::json segment_response_to_json(const SegmentResponse& resp);
SegmentResponse segment_response_from_json(const nlohmann::json& j);

nlohmann::json error_body(std::string_view code, std::string_view message);

/// Idempotency key: stable digest over role, path, task id and body.
std::string request_id(Role role, std::string_view path, std::string_view task_id,
                       std::string_view body);

}  // namespace wire

/// Client for one backend endpoint. Stateless apart from its configuration,
/// so it can be shared across worker threads.
class BackendClient {
 public:
  explicit BackendClient(BackendEndpoint ep);

  const BackendEndpoint& endpoint() const { return ep_; }

  /// Editor role. Throws BackendError; the returned raster always has the
  /// input's dimensions.
  ImageBuffer edit_image(const ImageBuffer& image, const std::string& instruction,
                         const std::string& task_id, CallRecord* record = nullptr) const;

  /// Segmenter roles. Every returned mask matches the request dimensions.
  SegmentResponse segment(const SegmentRequest& req, const std::string& task_id,
                          CallRecord* record = nullptr) const;

  /// Rewriter role. Best effort: any failure returns `query` unchanged and
  /// leaves the reason in record->error.
  std::string rewrite_query(const std::string& query, const std::string& task_id,
                            CallRecord* record = nullptr) const;

  HealthStatus health() const;

 private:
  nlohmann::json post(std::string_view path, const nlohmann::json& body,
                      const std::string& task_id, CallRecord* record) const;

  BackendEndpoint ep_;
};

}  // namespace diffusam

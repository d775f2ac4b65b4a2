#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffusam/backends.hpp"
#include "diffusam/geometry.hpp"

namespace diffusam {

/// How a mock backend misbehaves.
///  - oracle: the editor outlines the truth box; segmenters fill prompts.
///  - jitter: like oracle, with each box edge displaced by up to jitter_px.
///  - hallucinate: the editor outlines a box disjoint from the truth.
///  - fail: editor and rewriter answer 503, segmenters return no masks.
enum class MockBehavior { oracle, jitter, hallucinate, fail };

std::string_view to_string(MockBehavior b);
MockBehavior mock_behavior_from_string(std::string_view s);

struct MockConfig {
  MockBehavior behavior = MockBehavior::oracle;
  int jitter_px = 4;
  double shrink = 1.0;      // boxes-mode masks cover this linear fraction of the prompt
  double fail_rate = 0.0;   // extra per-request failure probability
  std::uint64_t seed = 0;
  std::map<std::string, BBox> truth_table;  // task id -> truth box
  std::vector<std::string> rewrite_suffixes;  // stripped by /v1/rewrite
  int stroke_px = 3;
  bool log_requests = false;

  void validate() const;
};

/// Result of handling one request, independent of any transport.
struct MockReply {
  int status = 200;
  std::string body;
};

/// The request-handling core of the mock server. Responses are a pure
/// function of (config, path, task id, body); arrival order never matters.
class MockResponder {
 public:
  MockResponder(MockConfig cfg, std::vector<Role> roles);

  MockReply handle(const std::string& method, const std::string& path,
                   const std::string& task_id, const std::string& body) const;

  const MockConfig& config() const { return cfg_; }
  const std::vector<Role>& roles() const { return roles_; }

 private:
  MockReply edit(const std::string& task_id, const std::string& body) const;
  MockReply segment(const std::string& task_id, const std::string& body) const;
  MockReply rewrite(const std::string& task_id, const std::string& body) const;
  bool serves(Role r) const;
  bool injected_failure(const std::string& path, const std::string& task_id,
                        const std::string& body) const;

  MockConfig cfg_;
  std::vector<Role> roles_;
};

class BindError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A local HTTP server speaking the backend wire protocol, backed by
/// MockResponder. Replies are cached per x-request-id.
class MockBackend {
 public:
  /// Binds and starts serving on a background thread. Port 0 picks a free
  /// port. Throws BindError if the port cannot be bound.
  MockBackend(MockConfig cfg, std::vector<Role> roles, std::string host = "127.0.0.1",
              int port = 0);
  ~MockBackend();

  MockBackend(const MockBackend&) = delete;
  MockBackend& operator=(const MockBackend&) = delete;

  int port() const;
  std::string base_url() const;
  BackendEndpoint endpoint(Role role, double timeout_s = 10.0, int retries = 0) const;
  std::size_t requests_served() const;

  /// Stops accepting requests; idempotent.
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Pseudorandom box the size of `truth` (halved until it fits) that does not
/// overlap it; without a truth box, an eighth of the image anywhere. nullopt
/// if no disjoint placement exists.
MaybeBox hallucinated_box(const MaybeBox& truth, Dims d, std::uint64_t seed,
                          const std::string& task_id);

/// Box-prompt mask footprint: `b` scaled by `shrink` about its center
/// (lengths rounded, offsets floored).
BBox shrink_box(const BBox& b, double shrink);

}  // namespace diffusam

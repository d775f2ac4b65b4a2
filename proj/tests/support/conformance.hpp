#pragma once

#include <string>
#include <vector>

namespace diffusam::testing {

/// One protocol check against a live server.
struct ConformanceCheck {
  std::string endpoint;  // "/v1/segment", ...
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ConformanceOptions {
  std::string base_url;
  double timeout_s = 10.0;
};

/// Exercises every endpoint the server advertises in /v1/health: response
/// shapes, mask dimensions and score ranges, x-request-id replay, and the
/// JSON error body on malformed input. Talks HTTP directly, not through
/// BackendClient.
std::vector<ConformanceCheck> run_conformance(const ConformanceOptions& opts);

/// Failed checks only.
std::vector<ConformanceCheck> failures(const std::vector<ConformanceCheck>& checks);

}  // namespace diffusam::testing

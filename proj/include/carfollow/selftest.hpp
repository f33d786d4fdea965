#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace carfollow {

struct SelfTestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelfTestOptions {
  std::uint64_t seed = 1;
  /// Negative control: fit against a library whose parameters are shifted
  /// by one cluster id, so recovery must fail.
  bool corrupt_library = false;
};

/// Synthetic end-to-end checks: model invariants, cluster recovery,
/// extraction on a known scenario, table consistency, cache and report
/// determinism. Output depends only on the options.
std::vector<SelfTestCheck> run_selftest(const SelfTestOptions& options);

} // namespace carfollow

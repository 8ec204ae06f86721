#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rvsa/tensor.hpp"

namespace rvsa {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;  // metric values, deterministic formatting
};

struct VerifyReport {
  std::uint64_t seed = 0;
  Precision precision = Precision::k64;
  std::vector<CheckResult> checks;

  bool all_passed() const;
  int num_failed() const;
  /// Machine-readable text: one `check <name> <pass|fail> <detail>` line per
  /// check plus a header and summary. Byte-identical for identical seed and
  /// precision mode.
  std::string render() const;
};

/// Runs the cross-module invariant checks (identity reductions, gradient
/// checks, the bilinear sampling oracle, kernel-padding equivalence, mask
/// partition, geometry sanity) under the current precision mode. Pure apart
/// from its return value.
VerifyReport run_verification_suite(std::uint64_t seed);

}  // namespace rvsa

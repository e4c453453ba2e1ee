#pragma once

#include <string>
#include <vector>

namespace fnat {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Test-harness fault injection: lets callers verify that the battery actually
// detects a broken transform instead of rubber-stamping it.
struct SelfcheckFaults {
  bool flip_ifft_sign = false;
};

// Runs the full invariant battery (spectral identities, oracle equivalence,
// gradient checks, optimizer/schedule fixtures, metric oracles). Deterministic
// and self-contained.
std::vector<CheckResult> run_selfcheck(const SelfcheckFaults& faults = {});

}  // namespace fnat

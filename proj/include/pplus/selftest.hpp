#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pplus {

struct SelftestResult {
  std::vector<std::pair<std::string, bool>> checks;
  std::vector<std::string> details;  // one line per failed check
  bool all_passed() const {
    for (const auto& [name, ok] : checks) {
      if (!ok) return false;
    }
    return true;
  }
};

// Runs every oracle check end to end: per-op gradient checks, the KDE
// brute-force/analytic/equivariance oracles, routing goldens, renderer/
// oracle inversion, schedule and sampler identities, and a short
// pretraining + inversion round. Self-contained (no network, no external
// model files); writes a report plus a few deterministic artifacts under
// out_dir.
SelftestResult run_selftest(const std::string& out_dir, uint64_t seed, int jobs,
                            const std::string& data_dir);

}  // namespace pplus

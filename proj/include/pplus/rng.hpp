#pragma once

#include <cstdint>
#include <vector>

namespace pplus {

// Self-contained xoshiro256** generator with Box-Muller normals.
// Standard-library distributions are implementation defined; everything
// that must replay bit-identically goes through this class instead.
class RandomSource {
 public:
  explicit RandomSource(uint64_t seed);

  uint64_t next_u64();
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // [0, n)
  int64_t uniform_int(int64_t n);
  double normal();
  std::vector<double> normal_vec(int64_t n);

 private:
  uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent stream for (base, a, b), used to give every
// (step, batch element) its own reproducible RNG regardless of scheduling.
uint64_t mix_seed(uint64_t base, uint64_t a, uint64_t b = 0);

}  // namespace pplus

#pragma once

#include <cstdint>
#include <vector>

#include "pplus/tensor.hpp"

namespace pplus {

// Linear-beta DDPM schedule. alpha_bar[0] == 1 marks the clean image;
// alpha_bar is strictly decreasing over 1..T.
struct NoiseSchedule {
  int64_t T = 1000;
  double beta_lo = 1e-4;
  double beta_hi = 2e-2;
  std::vector<double> beta;       // [T+1], index 0 unused
  std::vector<double> alpha_bar;  // [T+1]

  static NoiseSchedule linear(int64_t T = 1000, double beta_lo = 1e-4, double beta_hi = 2e-2);
  double abar(int64_t t) const;
};

// Closed-form q-sample: sqrt(abar_t) * img + sqrt(1 - abar_t) * eps.
Tensor forward_noise(const NoiseSchedule& ns, const Tensor& img, int64_t t, const Tensor& eps);

}  // namespace pplus

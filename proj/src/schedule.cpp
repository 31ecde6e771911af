#include "pplus/schedule.hpp"

#include <cmath>
#include <stdexcept>

#include "pplus/ops.hpp"

namespace pplus {

NoiseSchedule NoiseSchedule::linear(int64_t T, double beta_lo, double beta_hi) {
  if (T < 1 || beta_lo <= 0 || beta_hi >= 1 || beta_lo > beta_hi) {
    throw std::invalid_argument("bad noise schedule parameters");
  }
  NoiseSchedule ns;
  ns.T = T;
  ns.beta_lo = beta_lo;
  ns.beta_hi = beta_hi;
  ns.beta.assign(static_cast<size_t>(T + 1), 0.0);
  ns.alpha_bar.assign(static_cast<size_t>(T + 1), 1.0);
  double prod = 1.0;
  for (int64_t t = 1; t <= T; ++t) {
    const double b = T == 1 ? beta_lo
                            : beta_lo + (beta_hi - beta_lo) * static_cast<double>(t - 1) /
                                            static_cast<double>(T - 1);
    ns.beta[static_cast<size_t>(t)] = b;
    prod *= 1.0 - b;
    ns.alpha_bar[static_cast<size_t>(t)] = prod;
  }
  return ns;
}

double NoiseSchedule::abar(int64_t t) const {
  if (t < 0 || t > T) throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0, T]");
  return alpha_bar[static_cast<size_t>(t)];
}

Tensor forward_noise(const NoiseSchedule& ns, const Tensor& img, int64_t t, const Tensor& eps) {
  if (t < 1 || t > ns.T) {
    throw std::invalid_argument("timestep " + std::to_string(t) + " outside [1, T]");
  }
  if (img.shape() != eps.shape()) {
    throw std::invalid_argument("forward_noise: shape mismatch " + shape_str(img.shape()) + " vs " +
                                shape_str(eps.shape()));
  }
  const double ab = ns.abar(t);
  return add(scale(img, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

}  // namespace pplus

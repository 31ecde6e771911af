#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

namespace pplus {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Update rule, applied per element x with gradient g at step t (1-based):
//   m <- beta1*m + (1-beta1)*g
//   v <- beta2*v + (1-beta2)*g^2
//   x <- x - lr * (m / (1-beta1^t)) / (sqrt(v / (1-beta2^t)) + eps)
// No warmup, no weight decay. State is keyed by the storage address.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void begin_step() { ++t_; }
  void update(std::vector<double>& value, const std::vector<double>& grad);
  int64_t step_count() const { return t_; }

 private:
  struct State {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::unordered_map<const void*, State> states_;
};

}  // namespace pplus

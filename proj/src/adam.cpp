#include "pplus/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace pplus {

void Adam::update(std::vector<double>& value, const std::vector<double>& grad) {
  if (t_ < 1) throw std::logic_error("Adam::begin_step must be called before update");
  if (grad.size() != value.size()) throw std::invalid_argument("Adam: gradient size mismatch");
  State& st = states_[value.data()];
  if (st.m.empty()) {
    st.m.assign(value.size(), 0.0);
    st.v.assign(value.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < value.size(); ++i) {
    st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * grad[i];
    st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double mhat = st.m[i] / c1;
    const double vhat = st.v[i] / c2;
    value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
  }
}

}  // namespace pplus

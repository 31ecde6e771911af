#include "pplus/prompt.hpp"

#include <stdexcept>

namespace pplus {

ExtendedPrompt ExtendedPrompt::broadcast(const LayerRegistry& reg, LayerSpec spec) {
  ExtendedPrompt p;
  p.registry_fp = reg.fingerprint();
  p.specs.assign(static_cast<size_t>(reg.size()), spec);
  return p;
}

ExtendedPrompt ExtendedPrompt::per_layer(const LayerRegistry& reg, std::vector<LayerSpec> specs) {
  if (static_cast<int64_t>(specs.size()) != reg.size()) {
    throw std::invalid_argument("extended prompt needs " + std::to_string(reg.size()) +
                                " specs, got " + std::to_string(specs.size()));
  }
  ExtendedPrompt p;
  p.registry_fp = reg.fingerprint();
  p.specs = std::move(specs);
  return p;
}

ExtendedPrompt mix_extended(const ExtendedPrompt& p, const ExtendedPrompt& q, MixSpec spec) {
  if (p.registry_fp != q.registry_fp || p.size() != q.size()) {
    throw std::invalid_argument("mix_extended: prompts built on different registries");
  }
  const int64_t n = p.size();
  if (!(1 <= spec.k && spec.k < spec.K && spec.K <= n)) {
    throw std::invalid_argument("mix_extended: separators must satisfy 1 <= k < K <= n, got k=" +
                                std::to_string(spec.k) + " K=" + std::to_string(spec.K) +
                                " n=" + std::to_string(n));
  }
  ExtendedPrompt out;
  out.registry_fp = p.registry_fp;
  out.specs.reserve(static_cast<size_t>(n));
  for (int64_t i = 1; i <= n; ++i) {
    const bool from_q = spec.k < i && i <= spec.K;
    out.specs.push_back(from_q ? q.specs[static_cast<size_t>(i - 1)] : p.specs[static_cast<size_t>(i - 1)]);
  }
  return out;
}

}  // namespace pplus

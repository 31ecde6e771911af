#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pplus/layers.hpp"
#include "pplus/tensor.hpp"
#include "pplus/vocab.hpp"

namespace pplus {

// Conditioning for one cross-attention layer: a prompt template plus an
// optional embedding substituted at the template's placeholder slot. The
// override may be a graph leaf, which is how inversion differentiates
// through the encoder.
struct LayerSpec {
  PromptTemplate tmpl;
  Tensor override;  // undefined when the template has no placeholder

  bool has_override() const { return override.defined(); }
};

// One conditioning spec per cross-attention layer, aligned with a registry.
struct ExtendedPrompt {
  std::string registry_fp;
  std::vector<LayerSpec> specs;

  int64_t size() const { return static_cast<int64_t>(specs.size()); }

  static ExtendedPrompt broadcast(const LayerRegistry& reg, LayerSpec spec);
  static ExtendedPrompt per_layer(const LayerRegistry& reg, std::vector<LayerSpec> specs);
};

struct MixSpec {
  int64_t k = 0;
  int64_t K = 0;
};

// Layer i takes q's spec for k < i <= K (1-based registry positions) and
// p's spec otherwise. Requires both prompts on the same registry and
// 1 <= k < K <= n.
ExtendedPrompt mix_extended(const ExtendedPrompt& p, const ExtendedPrompt& q, MixSpec spec);

}  // namespace pplus

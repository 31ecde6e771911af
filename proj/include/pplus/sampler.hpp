#pragma once

#include <cstdint>

#include "pplus/model.hpp"

namespace pplus {

struct SamplerConfig {
  int64_t steps = 50;
  double guidance = 7.5;
  uint64_t seed = 0;
};

// Deterministic DDIM (eta = 0). Starts from seeded Gaussian noise, walks a
// uniformly spaced timestep subsequence down to 0, and clamps to [-1, 1]
// only at the final decode. Throws (with the step index) on any non-finite
// intermediate.
Tensor ddim_sample(const Model& m, const ExtendedPrompt& p, const SamplerConfig& cfg,
                   AttentionSink* sink = nullptr);

// Single-prompt path: one encoder pass, the same context fed to every layer
// without going through the extended-prompt routing.
Tensor ddim_sample(const Model& m, const PromptTemplate& prompt, const SamplerConfig& cfg,
                   AttentionSink* sink = nullptr);

}  // namespace pplus

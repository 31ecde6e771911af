#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pplus/model.hpp"

namespace pplus {

struct CaptionedImage {
  Tensor image;  // (3, s, s) in [-1, 1]
  std::string caption;
};

struct PretrainConfig {
  int64_t steps = 3000;
  double lr = 2e-3;
  int64_t batch = 8;
  uint64_t seed = 0;
  int jobs = 4;
  double uncond_dropout = 0.1;  // fraction of samples trained unconditionally
  int64_t log_every = 25;
  int64_t eval_count = 64;
};

struct PretrainResult {
  std::vector<std::pair<int64_t, double>> loss_log;  // (step, batch loss)
  double heldout_initial = 0.0;
  double heldout_final = 0.0;
};

// Denoising pretraining of the whole stack (lookup table, text encoder,
// U-net). Every 10th corpus item is held out; the result reports the
// held-out loss before and after training on a fixed evaluation batch.
PretrainResult pretrain(Model& m, const std::vector<CaptionedImage>& corpus, const PretrainConfig& cfg);

// Mean denoising loss of the model on fixed (image, eps, t) draws from the
// given items; deterministic for a fixed seed.
double denoising_eval_loss(const Model& m, const std::vector<const CaptionedImage*>& items,
                           int64_t count, uint64_t seed);

}  // namespace pplus

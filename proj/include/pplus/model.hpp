#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pplus/encoder.hpp"
#include "pplus/params.hpp"
#include "pplus/prompt.hpp"
#include "pplus/schedule.hpp"
#include "pplus/unet.hpp"
#include "pplus/vocab.hpp"

namespace pplus {

struct ModelConfig {
  EncoderConfig enc;
  UNetConfig unet;
  int64_t T = 1000;
  double beta_lo = 1e-4;
  double beta_hi = 2e-2;
};

// The full toy pipeline: vocabulary, token lookup table, frozen-after-
// pretraining text encoder, and the denoising U-net. Parameters live in one
// ordered store; the checkpoint simply streams them in declaration order.
struct Model {
  Vocabulary vocab;
  ModelConfig cfg;
  NoiseSchedule schedule;
  TextEncoder encoder;
  UNet unet;
  LayerRegistry registry;
  ParamStore params;
  uint64_t build_seed = 0;

  static Model build(Vocabulary vocab, ModelConfig cfg, uint64_t seed);

  PromptTemplate tokenize(const std::string& text) const;
  LayerSpec spec_of(const std::string& text) const { return LayerSpec{tokenize(text), Tensor()}; }
  ExtendedPrompt broadcast_prompt(const std::string& text) const;

  // Token rows with the override substituted at the placeholder slot,
  // passed through the text encoder. Differentiable w.r.t. the override.
  Tensor encode(ParamView& pv, const PromptTemplate& tmpl, const Tensor* override_embedding) const;

  // Context the given layer receives under p (encoded via the layer's spec).
  Tensor route(ParamView& pv, const ExtendedPrompt& p, const LayerId& layer) const;

  // Encodes every distinct spec exactly once and fans contexts out to the
  // registry slots that share it.
  LayerContexts encode_extended(ParamView& pv, const ExtendedPrompt& p) const;

  Tensor predict_noise(ParamView& pv, const Tensor& x, int64_t t, const ExtendedPrompt& p,
                       AttentionSink* sink = nullptr) const;
  Tensor predict_noise_ctx(ParamView& pv, const Tensor& x, int64_t t, const LayerContexts& ctx,
                           AttentionSink* sink = nullptr) const;
  // eps_uncond + w * (eps_cond - eps_uncond)
  Tensor cfg_predict(ParamView& pv, const Tensor& x, int64_t t, const ExtendedPrompt& p, double w,
                     AttentionSink* sink = nullptr) const;

  uint64_t checksum() const { return params.checksum(); }

  // Read-only parameter view for inference paths (no graph, no leaves).
  ParamView view() const { return ParamView(const_cast<ParamStore&>(params), nullptr, false); }

  void save(const std::string& path) const;
  static Model load(const std::string& path);
};

}  // namespace pplus

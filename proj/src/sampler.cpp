#include "pplus/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include "pplus/ops.hpp"
#include "pplus/rng.hpp"

namespace pplus {

namespace {

Tensor ddim_loop(const Model& m, const LayerContexts& cond, const LayerContexts& uncond,
                 const SamplerConfig& cfg, AttentionSink* sink) {
  if (cfg.steps < 1 || cfg.steps > m.cfg.T) {
    throw std::invalid_argument("sampler steps must lie in [1, T]");
  }
  if (cfg.guidance < 0) throw std::invalid_argument("guidance scale must be nonnegative");

  const int64_t sz = m.cfg.unet.image_size;
  RandomSource rng(mix_seed(cfg.seed, 0xd1f5));
  Tensor x = Tensor::constant({m.cfg.unet.image_channels, sz, sz},
                              rng.normal_vec(m.cfg.unet.image_channels * sz * sz));

  ParamView pv = m.view();
  for (int64_t i = 0; i < cfg.steps; ++i) {
    try {
      const int64_t t = m.cfg.T * (cfg.steps - i) / cfg.steps;
      const int64_t t_prev = m.cfg.T * (cfg.steps - i - 1) / cfg.steps;
      Tensor eps_c = m.predict_noise_ctx(pv, x, t, cond, sink);
      Tensor eps;
      if (cfg.guidance == 1.0 && sink == nullptr) {
        eps = eps_c;  // the unconditional pass cannot matter at w = 1
      } else {
        Tensor eps_u = m.predict_noise_ctx(pv, x, t, uncond, nullptr);
        eps = add(eps_u, scale(sub(eps_c, eps_u), cfg.guidance));
      }
      const double ab = m.schedule.abar(t);
      const double abp = m.schedule.abar(t_prev);
      // x0_hat = (x - sqrt(1-ab) eps) / sqrt(ab); x_prev = sqrt(abp) x0_hat + sqrt(1-abp) eps
      Tensor x0 = scale(sub(x, scale(eps, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
      x = add(scale(x0, std::sqrt(abp)), scale(eps, std::sqrt(1.0 - abp)));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("sampling aborted at step " + std::to_string(i) + ": " + e.what());
    }
  }
  std::vector<double> out = x.data();
  for (double& v : out) v = std::min(1.0, std::max(-1.0, v));
  return Tensor::constant(x.shape(), std::move(out));
}

}  // namespace

Tensor ddim_sample(const Model& m, const ExtendedPrompt& p, const SamplerConfig& cfg,
                   AttentionSink* sink) {
  ParamView pv = m.view();
  LayerContexts cond = m.encode_extended(pv, p);
  LayerContexts uncond = m.encode_extended(pv, m.broadcast_prompt(""));
  return ddim_loop(m, cond, uncond, cfg, sink);
}

Tensor ddim_sample(const Model& m, const PromptTemplate& prompt, const SamplerConfig& cfg,
                   AttentionSink* sink) {
  ParamView pv = m.view();
  // one encoder pass, shared by every cross-attention layer
  Tensor ctx = m.encode(pv, prompt, nullptr);
  LayerContexts cond;
  cond.ctx.assign(static_cast<size_t>(m.registry.size()), ctx);
  cond.mask.assign(static_cast<size_t>(m.registry.size()), prompt.mask);
  PromptTemplate empty = m.tokenize("");
  Tensor ectx = m.encode(pv, empty, nullptr);
  LayerContexts uncond;
  uncond.ctx.assign(static_cast<size_t>(m.registry.size()), ectx);
  uncond.mask.assign(static_cast<size_t>(m.registry.size()), empty.mask);
  return ddim_loop(m, cond, uncond, cfg, sink);
}

}  // namespace pplus

#include "pplus/pretrain.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "pplus/adam.hpp"
#include "pplus/ops.hpp"
#include "pplus/rng.hpp"

namespace pplus {

namespace {

Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return scale(sum_all(mul(d, d)), 1.0 / static_cast<double>(a.numel()));
}

struct SampleGrad {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;  // aligned with param index
};

}  // namespace

double denoising_eval_loss(const Model& m, const std::vector<const CaptionedImage*>& items,
                           int64_t count, uint64_t seed) {
  if (items.empty()) throw std::invalid_argument("evaluation set is empty");
  ParamView pv = m.view();
  double total = 0.0;
  for (int64_t j = 0; j < count; ++j) {
    RandomSource rng(mix_seed(seed, 0xe7a1, static_cast<uint64_t>(j)));
    const CaptionedImage& it = *items[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(items.size())))];
    const int64_t t = 1 + rng.uniform_int(m.cfg.T);
    Tensor eps = Tensor::constant(it.image.shape(), rng.normal_vec(it.image.numel()));
    Tensor xt = forward_noise(m.schedule, it.image, t, eps);
    Tensor eps_hat = m.predict_noise(pv, xt, t, ExtendedPrompt::broadcast(m.registry, m.spec_of(it.caption)));
    total += mse(eps, eps_hat).value();
  }
  return total / static_cast<double>(count);
}

PretrainResult pretrain(Model& m, const std::vector<CaptionedImage>& corpus, const PretrainConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("pretraining corpus is empty");
  if (cfg.steps < 0 || cfg.batch < 1 || cfg.lr <= 0) {
    throw std::invalid_argument("bad pretraining configuration");
  }

  std::vector<const CaptionedImage*> train, held;
  for (size_t i = 0; i < corpus.size(); ++i) {
    (i % 10 == 9 ? held : train).push_back(&corpus[i]);
  }
  if (held.empty()) held = train;

  std::unordered_map<const Param*, size_t> pindex;
  for (size_t i = 0; i < m.params.size(); ++i) pindex.emplace(&m.params.param(i), i);

  PretrainResult res;
  res.heldout_initial = denoising_eval_loss(m, held, cfg.eval_count, cfg.seed);

  Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  const int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(cfg.batch)));

  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<SampleGrad> results(static_cast<size_t>(cfg.batch));
    auto worker = [&](int tid) {
      for (int64_t b = tid; b < cfg.batch; b += jobs) {
        RandomSource rng(mix_seed(cfg.seed, static_cast<uint64_t>(step), static_cast<uint64_t>(b)));
        const CaptionedImage& it =
            *train[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(train.size())))];
        std::string caption = it.caption;
        if (rng.uniform() < 0.5) caption = "a photo of " + caption;  // prompt augmentation
        if (rng.uniform() < cfg.uncond_dropout) caption.clear();     // classifier-free training
        const int64_t t = 1 + rng.uniform_int(m.cfg.T);
        Tensor eps = Tensor::constant(it.image.shape(), rng.normal_vec(it.image.numel()));
        Tensor xt = forward_noise(m.schedule, it.image, t, eps);

        Graph g;
        ParamView pv(m.params, &g, /*trainable=*/true);
        Tensor eps_hat =
            m.predict_noise(pv, xt, t, ExtendedPrompt::broadcast(m.registry, m.spec_of(caption)));
        Tensor loss = mse(eps, eps_hat);
        GradientMap grads = g.backward(loss);
        SampleGrad& out = results[static_cast<size_t>(b)];
        out.loss = loss.value();
        out.grads.resize(m.params.size());
        for (const auto& [param, node] : pv.leaves()) {
          out.grads[pindex.at(param)] = grads.at(node).data();
        }
      }
    };
    if (jobs == 1) {
      worker(0);
    } else {
      std::vector<std::thread> pool;
      for (int tidx = 0; tidx < jobs; ++tidx) pool.emplace_back(worker, tidx);
      for (auto& th : pool) th.join();
    }

    // merge in batch order, then one optimizer step
    double batch_loss = 0.0;
    std::vector<std::vector<double>> acc(m.params.size());
    for (int64_t b = 0; b < cfg.batch; ++b) {
      const SampleGrad& sg = results[static_cast<size_t>(b)];
      batch_loss += sg.loss;
      for (size_t pi = 0; pi < sg.grads.size(); ++pi) {
        if (sg.grads[pi].empty()) continue;
        if (acc[pi].empty()) acc[pi].assign(sg.grads[pi].size(), 0.0);
        for (size_t k = 0; k < sg.grads[pi].size(); ++k) acc[pi][k] += sg.grads[pi][k];
      }
    }
    batch_loss /= static_cast<double>(cfg.batch);
    if (!std::isfinite(batch_loss)) {
      throw std::runtime_error("non-finite pretraining loss at step " + std::to_string(step));
    }

    opt.begin_step();
    const double inv_b = 1.0 / static_cast<double>(cfg.batch);
    for (size_t pi = 0; pi < acc.size(); ++pi) {
      if (acc[pi].empty()) continue;
      for (double& v : acc[pi]) v *= inv_b;
      opt.update(*m.params.param(pi).value, acc[pi]);
    }

    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      res.loss_log.emplace_back(step, batch_loss);
    }
  }

  res.heldout_final = denoising_eval_loss(m, held, cfg.eval_count, cfg.seed);
  return res;
}

}  // namespace pplus

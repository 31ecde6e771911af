#include <cmath>

#include "doctest.h"
#include "pplus/corpus.hpp"
#include "pplus/fsutil.hpp"
#include "pplus/model.hpp"
#include "pplus/ops.hpp"
#include "pplus/pretrain.hpp"
#include "pplus/rng.hpp"
#include "pplus/sampler.hpp"
#include "pplus/schedule.hpp"
#include "testutil.hpp"

using namespace pplus;
using pplus::test::micro_model;
using pplus::test::toy_vocab;

namespace {

std::vector<CaptionedImage> tiny_corpus(int64_t count, int64_t size, uint64_t seed) {
  std::vector<CaptionedImage> out;
  for (const SceneSpec& spec : corpus_specs(count, size, seed, {})) {
    out.push_back(CaptionedImage{render(spec), caption_of(spec)});
  }
  return out;
}

}  // namespace

TEST_CASE("noise schedule invariants") {
  NoiseSchedule ns = NoiseSchedule::linear();
  CHECK(ns.abar(0) == 1.0);
  CHECK(ns.abar(1) == doctest::Approx(1.0).epsilon(1e-3));
  for (int64_t t = 1; t <= ns.T; ++t) {
    CHECK(ns.abar(t) < ns.abar(t - 1));
    CHECK(ns.abar(t) > 0.0);
    CHECK(ns.abar(t) < 1.0);
  }
}

TEST_CASE("forward_noise closed form") {
  NoiseSchedule ns = NoiseSchedule::linear();
  RandomSource rng(3);
  Tensor img = Tensor::constant({3, 4, 4}, rng.normal_vec(48));

  SUBCASE("zero noise scales the image by sqrt(abar)") {
    Tensor zero = Tensor::zeros(img.shape());
    Tensor xt = forward_noise(ns, img, 400, zero);
    const double s = std::sqrt(ns.abar(400));
    for (int64_t i = 0; i < img.numel(); ++i) CHECK(xt.at(i) == doctest::Approx(s * img.at(i)).epsilon(1e-15));
  }
  SUBCASE("at t = T the image contribution nearly vanishes") {
    Tensor eps = Tensor::constant(img.shape(), rng.normal_vec(48));
    Tensor xt = forward_noise(ns, img, ns.T, eps);
    double maxdev = 0.0, maximg = 0.0;
    const double se = std::sqrt(1.0 - ns.abar(ns.T));
    for (int64_t i = 0; i < img.numel(); ++i) {
      maxdev = std::max(maxdev, std::abs(xt.at(i) - se * eps.at(i)));
      maximg = std::max(maximg, std::abs(img.at(i)));
    }
    CHECK(maxdev <= std::sqrt(ns.abar(ns.T)) * maximg + 1e-15);
  }
  SUBCASE("rejects bad input") {
    CHECK_THROWS_AS(forward_noise(ns, img, 0, Tensor::zeros(img.shape())), std::invalid_argument);
    CHECK_THROWS_AS(forward_noise(ns, img, ns.T + 1, Tensor::zeros(img.shape())), std::invalid_argument);
    CHECK_THROWS_AS(forward_noise(ns, img, 5, Tensor::zeros({3, 2, 2})), std::invalid_argument);
  }
}

TEST_CASE("forward_noise variance Monte-Carlo oracle") {
  NoiseSchedule ns = NoiseSchedule::linear();
  RandomSource rng(11);
  Tensor img = Tensor::constant({3, 4, 4}, rng.normal_vec(48));
  for (int64_t t : {120, 700}) {
    const double sa = std::sqrt(ns.abar(t));
    double sum = 0.0, sum2 = 0.0;
    int64_t n = 0;
    for (int draw = 0; draw < 2200; ++draw) {  // 2200 x 48 > 1e5 element samples
      Tensor eps = Tensor::constant(img.shape(), rng.normal_vec(48));
      Tensor xt = forward_noise(ns, img, t, eps);
      for (int64_t i = 0; i < xt.numel(); ++i) {
        const double dev = xt.at(i) - sa * img.at(i);
        sum += dev;
        sum2 += dev * dev;
        ++n;
      }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sum2 / static_cast<double>(n) - mean * mean;
    const double want = 1.0 - ns.abar(t);
    CHECK(std::abs(var - want) / want < 0.02);
  }
}

TEST_CASE("broadcast extended prompt equals the single-prompt path bit-exactly") {
  Model m = micro_model(7);
  ParamView pv = m.view();
  RandomSource rng(5);
  const int64_t sz = m.cfg.unet.image_size;
  Tensor x = Tensor::constant({3, sz, sz}, rng.normal_vec(3 * sz * sz));

  PromptTemplate tmpl = m.tokenize("green circle, checker");
  Tensor eps_ext = m.predict_noise(pv, x, 333, ExtendedPrompt::broadcast(m.registry, LayerSpec{tmpl, Tensor()}));

  // single-prompt path: encode once, hand the same context to every layer
  Tensor ctx = m.encode(pv, tmpl, nullptr);
  LayerContexts lc;
  lc.ctx.assign(static_cast<size_t>(m.registry.size()), ctx);
  lc.mask.assign(static_cast<size_t>(m.registry.size()), tmpl.mask);
  Tensor eps_single = m.predict_noise_ctx(pv, x, 333, lc);

  CHECK(eps_ext.same_bits(eps_single));

  Tensor again = m.predict_noise(pv, x, 333, ExtendedPrompt::broadcast(m.registry, LayerSpec{tmpl, Tensor()}));
  CHECK(eps_ext.same_bits(again));
}

TEST_CASE("registry mismatch is rejected") {
  Model m = micro_model(7);
  Model ref = pplus::test::reference_model(7);
  ParamView pv = m.view();
  RandomSource rng(5);
  const int64_t sz = m.cfg.unet.image_size;
  Tensor x = Tensor::constant({3, sz, sz}, rng.normal_vec(3 * sz * sz));
  CHECK_THROWS_AS(m.predict_noise(pv, x, 10, ref.broadcast_prompt("red square")), std::invalid_argument);
}

TEST_CASE("cfg_predict identities") {
  Model m = micro_model(9);
  ParamView pv = m.view();
  RandomSource rng(6);
  const int64_t sz = m.cfg.unet.image_size;
  Tensor x = Tensor::constant({3, sz, sz}, rng.normal_vec(3 * sz * sz));
  ExtendedPrompt p = m.broadcast_prompt("red square, stripes");

  Tensor cond = m.predict_noise(pv, x, 250, p);
  Tensor uncond = m.predict_noise(pv, x, 250, m.broadcast_prompt(""));

  Tensor w1 = m.cfg_predict(pv, x, 250, p, 1.0);
  Tensor w0 = m.cfg_predict(pv, x, 250, p, 0.0);
  Tensor w75 = m.cfg_predict(pv, x, 250, p, 7.5);
  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(w1.at(i) - cond.at(i)) <= 1e-12);
    CHECK(std::abs(w0.at(i) - uncond.at(i)) <= 1e-12);
    const double affine = uncond.at(i) + 7.5 * (cond.at(i) - uncond.at(i));
    CHECK(std::abs(w75.at(i) - affine) <= 1e-12);
  }
  CHECK_THROWS_AS(m.cfg_predict(pv, x, 250, p, -1.0), std::invalid_argument);
}

TEST_CASE("ddim sampling determinism and mixing degeneracy") {
  Model m = micro_model(4);
  SamplerConfig sc{8, 7.5, 42};
  ExtendedPrompt p = m.broadcast_prompt("blue diamond, solid");

  Tensor a = ddim_sample(m, p, sc);
  Tensor b = ddim_sample(m, p, sc);
  CHECK(a.same_bits(b));
  for (int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a.at(i) >= -1.0);
    CHECK(a.at(i) <= 1.0);
  }

  ExtendedPrompt mixed = mix_extended(p, p, MixSpec{2, 4});
  CHECK(ddim_sample(m, mixed, sc).same_bits(a));

  // single-prompt overload agrees bit-exactly with the broadcast route
  Tensor s = ddim_sample(m, m.tokenize("blue diamond, solid"), sc);
  CHECK(s.same_bits(a));

  SamplerConfig bad{0, 7.5, 1};
  CHECK_THROWS_AS(ddim_sample(m, p, bad), std::invalid_argument);
}

TEST_CASE("checkpoint round trip") {
  Model m = micro_model(15);
  const std::string path = "/tmp/pplus_test_ckpt.pplus";
  m.save(path);
  Model back = Model::load(path);
  CHECK(back.checksum() == m.checksum());
  CHECK(back.registry == m.registry);
  CHECK(back.vocab.size() == m.vocab.size());
  CHECK(back.cfg.unet.preset == "micro-5");

  // sampling agrees bit-exactly after reload
  SamplerConfig sc{5, 7.5, 3};
  CHECK(ddim_sample(back, back.broadcast_prompt("red square"), sc)
            .same_bits(ddim_sample(m, m.broadcast_prompt("red square"), sc)));

  const std::string junk = "/tmp/pplus_test_junk.bin";
  atomic_write(junk, std::string("not a checkpoint"));
  CHECK_THROWS(Model::load(junk));
}

TEST_CASE("pretrain determinism and zero-step identity") {
  auto corpus = tiny_corpus(40, 16, 3);

  SUBCASE("steps = 0 leaves the checkpoint at initialization") {
    Model m = micro_model(21);
    const uint64_t before = m.checksum();
    PretrainConfig pc;
    pc.steps = 0;
    pc.eval_count = 4;
    pretrain(m, corpus, pc);
    CHECK(m.checksum() == before);
  }
  SUBCASE("same seed twice gives bit-identical checkpoints") {
    PretrainConfig pc;
    pc.steps = 4;
    pc.batch = 4;
    pc.jobs = 4;
    pc.seed = 10;
    pc.eval_count = 4;
    Model a = micro_model(21);
    pretrain(a, corpus, pc);
    Model b = micro_model(21);
    pretrain(b, corpus, pc);
    CHECK(a.checksum() == b.checksum());

    // job count must not change the result
    Model c = micro_model(21);
    pc.jobs = 1;
    pretrain(c, corpus, pc);
    CHECK(c.checksum() == a.checksum());
  }
}

TEST_CASE("short pretraining reduces the held-out loss") {
  auto corpus = tiny_corpus(120, 16, 5);
  Model m = micro_model(22);
  PretrainConfig pc;
  pc.steps = 150;
  pc.batch = 8;
  pc.jobs = 4;
  pc.seed = 2;
  pc.eval_count = 16;
  PretrainResult res = pretrain(m, corpus, pc);
  CHECK(res.heldout_final < res.heldout_initial);

  // a lightly trained model reacts to a one-layer prompt change
  ParamView pv = m.view();
  RandomSource rng(8);
  const int64_t sz = m.cfg.unet.image_size;
  Tensor x = Tensor::constant({3, sz, sz}, rng.normal_vec(3 * sz * sz));
  ExtendedPrompt p = m.broadcast_prompt("red square, solid");
  ExtendedPrompt q = p;
  q.specs.back() = m.spec_of("blue circle, solid");  // finest up layer
  Tensor ep = m.predict_noise(pv, x, 300, p);
  Tensor eq = m.predict_noise(pv, x, 300, q);
  double maxdiff = 0.0;
  for (int64_t i = 0; i < ep.numel(); ++i) maxdiff = std::max(maxdiff, std::abs(ep.at(i) - eq.at(i)));
  CHECK(maxdiff > 1e-12);
}

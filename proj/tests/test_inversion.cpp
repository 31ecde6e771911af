#include <cmath>

#include "doctest.h"
#include "pplus/corpus.hpp"
#include "pplus/invert.hpp"
#include "pplus/ops.hpp"
#include "pplus/pretrain.hpp"
#include "pplus/rng.hpp"
#include "testutil.hpp"

using namespace pplus;
using pplus::test::micro_model;

namespace {

const std::vector<std::string>& bank() {
  static const std::vector<std::string> b = {"a photo of <token>", "a picture of <token>"};
  return b;
}

// One lightly pretrained micro model shared by the cases below.
Model& fixture_model() {
  static Model m = [] {
    Model model = micro_model(40);
    std::vector<CaptionedImage> corpus;
    for (const SceneSpec& spec : corpus_specs(160, 16, 12, {{ShapeKind::Cross, color_from("yellow"), TextureKind::Solid}})) {
      corpus.push_back(CaptionedImage{render(spec), caption_of(spec)});
    }
    PretrainConfig pc;
    pc.steps = 400;
    pc.batch = 8;
    pc.jobs = 4;
    pc.seed = 7;
    pc.eval_count = 8;
    pretrain(model, corpus, pc);
    return model;
  }();
  return m;
}

ConceptDataset fixture_concept(int count = 4) {
  ConceptRender cr = make_concept({ShapeKind::Cross, color_from("yellow"), TextureKind::Solid}, count, 5, 16);
  return ConceptDataset{cr.images, cr.shape_word};
}

}  // namespace

TEST_CASE("noise mse of identical tensors is zero") {
  Tensor e = Tensor::constant({3, 2, 2}, RandomSource(1).normal_vec(12));
  CHECK(noise_mse(e, e).value() == 0.0);
}

TEST_CASE("embed_init strategies") {
  Model m = micro_model(2);
  const int64_t d = m.cfg.enc.d;

  auto zeros = embed_init(m, "zeros", "", 3);
  REQUIRE(zeros.size() == 3);
  for (const auto& e : zeros) {
    for (double v : e) CHECK(v == 0.0);
  }

  auto coarse = embed_init(m, "coarse-word", "cat", 5);
  const auto& table = *m.params.at("lookup.table").value;
  const int32_t id = m.vocab.id_of("cat");
  for (const auto& e : coarse) {
    for (int64_t j = 0; j < d; ++j) CHECK(e[static_cast<size_t>(j)] == table[static_cast<size_t>(id * d + j)]);
  }

  auto mean = embed_init(m, "mean-of-table", "", 1);
  for (int64_t j = 0; j < d; ++j) {
    double want = 0.0;
    for (int64_t r = 0; r < m.vocab.natural_size(); ++r) want += table[static_cast<size_t>(r * d + j)];
    want /= static_cast<double>(m.vocab.natural_size());
    CHECK(mean[0][static_cast<size_t>(j)] == doctest::Approx(want).epsilon(1e-12));
  }

  CHECK_THROWS_AS(embed_init(m, "coarse-word", "zebra", 1), std::invalid_argument);
  CHECK_THROWS_AS(embed_init(m, "nonsense", "cat", 1), std::invalid_argument);
}

TEST_CASE("tied TI embedding reproduces the single-prompt TI loss bit-exactly") {
  Model m = micro_model(3);
  ConceptDataset data = fixture_concept(2);
  std::vector<PromptTemplate> templates = {m.tokenize(bank()[0])};
  XtiBatchItem item = draw_batch_item(9, 0, 0, 2, 1, m.cfg.T, data.images[0].shape());

  Graph g;
  ParamView pv(m.params, &g, false);
  Tensor e = g.leaf({m.cfg.enc.d}, embed_init(m, "coarse-word", "cross", 1)[0], true);

  Tensor loss_x = xti_loss(m, pv, data.images, templates, {e}, {item});

  // manual TI: encode once with the override, feed every layer
  Tensor xt = forward_noise(m.schedule, data.images[0], item.t, item.eps);
  Tensor ctx = m.encode(pv, templates[0], &e);
  LayerContexts lc;
  lc.ctx.assign(static_cast<size_t>(m.registry.size()), ctx);
  lc.mask.assign(static_cast<size_t>(m.registry.size()), templates[0].mask);
  Tensor loss_ti = noise_mse(item.eps, m.predict_noise_ctx(pv, xt, item.t, lc));

  CHECK(loss_x.same_bits(loss_ti));

  GradientMap grads = g.backward(add(loss_x, loss_ti));
  (void)grads;  // both paths share the same leaf; reaching here means the
                // tied graph is well-formed
}

TEST_CASE("xti loss gradient w.r.t. per-layer embeddings matches finite differences") {
  Model& m = fixture_model();
  ConceptDataset data = fixture_concept(2);
  std::vector<PromptTemplate> templates = {m.tokenize(bank()[0])};
  XtiBatchItem item = draw_batch_item(17, 0, 0, 2, 1, m.cfg.T, data.images[0].shape());
  const int64_t n = m.registry.size();

  std::vector<std::vector<double>> base = embed_init(m, "coarse-word", "cross", n);
  // probe the first and last layers in the unit suite; the acceptance
  // gradient suite sweeps all of them
  for (int64_t check : {int64_t{0}, n - 1}) {
    auto f = [&](const Tensor& x, Graph& g) {
      ParamView pv(m.params, &g, false);
      std::vector<Tensor> leaves;
      for (int64_t i = 0; i < n; ++i) {
        if (i == check) {
          leaves.push_back(x);
        } else {
          leaves.push_back(Tensor::constant({m.cfg.enc.d}, base[static_cast<size_t>(i)]));
        }
      }
      return xti_loss(m, pv, data.images, templates, leaves, {item});
    };
    Tensor x0 = Tensor::constant({m.cfg.enc.d}, base[static_cast<size_t>(check)]);
    const double err = finite_diff_check(f, x0);
    INFO("layer ", check, " err ", err);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("invert with zero steps returns the initialization") {
  Model& m = fixture_model();
  ConceptDataset data = fixture_concept();
  InversionConfig cfg;
  cfg.mode = InversionMode::XTI;
  cfg.steps = 0;
  cfg.templates = bank();
  InvertedConcept c = invert(m, data, cfg);
  const auto init = embed_init(m, "coarse-word", "cross", m.registry.size());
  REQUIRE(c.embeddings.size() == static_cast<size_t>(m.registry.size()));
  for (size_t i = 0; i < c.embeddings.size(); ++i) CHECK(c.embeddings[i] == init[i]);
}

TEST_CASE("invert leaves the model parameters bit-identical") {
  Model& m = fixture_model();
  ConceptDataset data = fixture_concept();
  const uint64_t before = m.checksum();
  InversionConfig cfg;
  cfg.mode = InversionMode::XTI;
  cfg.steps = 20;
  cfg.batch = 4;
  cfg.jobs = 4;
  cfg.templates = bank();
  InvertedConcept c = invert(m, data, cfg);
  CHECK(m.checksum() == before);
  CHECK(c.recon_trajectory.size() == 20);
  for (const auto& e : c.embeddings) {
    for (double v : e) CHECK(std::isfinite(v));
  }
}

TEST_CASE("inversion is deterministic in the seed") {
  Model& m = fixture_model();
  ConceptDataset data = fixture_concept();
  InversionConfig cfg;
  cfg.mode = InversionMode::XTI;
  cfg.steps = 6;
  cfg.batch = 4;
  cfg.seed = 77;
  cfg.templates = bank();
  cfg.jobs = 4;
  InvertedConcept a = invert(m, data, cfg);
  cfg.jobs = 1;
  InvertedConcept b = invert(m, data, cfg);
  CHECK(a.embeddings == b.embeddings);
  CHECK(a.recon_trajectory == b.recon_trajectory);
}

TEST_CASE("first optimizer step applies recon grad minus lambda times density grad") {
  Model& m = fixture_model();
  ConceptDataset data = fixture_concept(1);
  const int64_t d = m.cfg.enc.d;
  const double lr = 0.005, lambda = 0.002;

  InversionConfig cfg;
  cfg.mode = InversionMode::TI;
  cfg.steps = 1;
  cfg.batch = 1;
  cfg.seed = 5;
  cfg.lr = lr;
  cfg.templates = {bank()[0]};
  cfg.single_image = true;
  cfg.init_word = "cross";

  InversionConfig reg_cfg = cfg;
  reg_cfg.reg_lambda = lambda;

  // replicate the single batch item and its reconstruction gradient
  std::vector<PromptTemplate> templates = {m.tokenize(bank()[0])};
  XtiBatchItem item = draw_batch_item(cfg.seed, 0, 0, 1, 1, m.cfg.T, data.images[0].shape());
  const std::vector<double> e0 = embed_init(m, "coarse-word", "cross", 1)[0];
  Graph g;
  ParamView pv(m.params, &g, false);
  Tensor leaf = g.leaf({d}, e0, true);
  Tensor loss = xti_loss(m, pv, {data.images[0]}, templates, {leaf}, {item});
  const std::vector<double> grad_recon = g.backward(loss).at(leaf.node()).data();

  DensityModel dens = fit_density(LookupTable(m.params.at("lookup.table").value, m.vocab.natural_size(), d));
  const std::vector<double> grad_dens = dens.log_density_grad(e0);

  auto adam_first_step = [&](const std::vector<double>& grad) {
    std::vector<double> out(e0.size());
    for (size_t i = 0; i < e0.size(); ++i) {
      // first Adam step: mhat = g, vhat = g^2
      out[i] = e0[i] - lr * grad[i] / (std::abs(grad[i]) + 1e-8);
    }
    return out;
  };

  InvertedConcept plain = invert(m, data, cfg);
  const auto want_plain = adam_first_step(grad_recon);
  for (size_t i = 0; i < e0.size(); ++i) {
    CHECK(plain.embeddings[0][i] == doctest::Approx(want_plain[i]).epsilon(1e-12));
  }

  InvertedConcept reg = invert(m, data, reg_cfg);
  std::vector<double> combined(grad_recon.size());
  for (size_t i = 0; i < combined.size(); ++i) combined[i] = grad_recon[i] - lambda * grad_dens[i];
  const auto want_reg = adam_first_step(combined);
  for (size_t i = 0; i < e0.size(); ++i) {
    CHECK(reg.embeddings[0][i] == doctest::Approx(want_reg[i]).epsilon(1e-12));
  }
}

TEST_CASE("single-image inversion at lr 0.001 converges") {
  Model& m = fixture_model();
  ConceptDataset data = fixture_concept(1);
  InversionConfig cfg;
  cfg.mode = InversionMode::XTI;
  cfg.steps = 300;
  cfg.batch = 8;
  cfg.jobs = 4;
  cfg.seed = 3;
  cfg.templates = bank();
  cfg.single_image = true;
  InvertedConcept c = invert(m, data, cfg);

  // defaults resolved for the single-image regime
  CHECK(c.config_echo.find("0.001") != std::string::npos);

  double head = 0.0;
  for (size_t i = 0; i < 50; ++i) head += c.recon_trajectory[i];
  head /= 50.0;
  CHECK(c.final_loss < 0.7 * c.recon_trajectory.front());
  CHECK(c.final_loss < head);  // smoothed descent
}

TEST_CASE("concept files round trip") {
  Model& m = fixture_model();
  ConceptDataset data = fixture_concept();
  InversionConfig cfg;
  cfg.mode = InversionMode::XTI;
  cfg.steps = 3;
  cfg.batch = 2;
  cfg.templates = bank();
  InvertedConcept c = invert(m, data, cfg);
  const std::string path = "/tmp/pplus_test_concept.pplusc";
  c.save(path);
  InvertedConcept back = InvertedConcept::load(path);
  CHECK(back.mode == c.mode);
  CHECK(back.embeddings == c.embeddings);
  CHECK(back.registry_fp == c.registry_fp);
  CHECK(back.final_loss == c.final_loss);

  ExtendedPrompt p = back.prompt_for(m, "a photo of <token>");
  CHECK(p.size() == m.registry.size());
  CHECK_THROWS_AS(back.prompt_for(m, "a photo of cat"), std::invalid_argument);
}

#include "pplus/selftest.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "pplus/analysis.hpp"
#include "pplus/corpus.hpp"
#include "pplus/density.hpp"
#include "pplus/fsutil.hpp"
#include "pplus/invert.hpp"
#include "pplus/model.hpp"
#include "pplus/ops.hpp"
#include "pplus/png_io.hpp"
#include "pplus/pretrain.hpp"
#include "pplus/rng.hpp"
#include "pplus/sampler.hpp"

namespace pplus {

namespace {

struct Runner {
  SelftestResult result;

  void check(const std::string& name, bool ok, const std::string& detail = "") {
    result.checks.emplace_back(name, ok);
    if (!ok) result.details.push_back(name + ": " + detail);
  }

  template <typename Fn>
  void guarded(const std::string& name, Fn&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      check(name, false, std::string("exception: ") + e.what());
    }
  }
};

Tensor rand_tensor(Shape shape, RandomSource& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::constant(std::move(shape), std::move(v));
}

double naive_log_density(const DensityModel& m, const std::vector<double>& x) {
  double total = 0.0;
  for (int64_t j = 0; j < m.dim; ++j) {
    const double h = m.bandwidth[static_cast<size_t>(j)];
    double mean = 0.0;
    for (int64_t i = 0; i < m.n; ++i) {
      const double d = x[static_cast<size_t>(j)] - m.ref[static_cast<size_t>(i * m.dim + j)];
      mean += std::exp(-0.5 * d * d / (h * h)) / (h * std::sqrt(2.0 * M_PI));
    }
    total += std::log(mean / static_cast<double>(m.n));
  }
  return total;
}

void op_gradient_suite(Runner& r) {
  RandomSource rng(1234);
  std::set<std::string> covered;
  double worst = 0.0;
  std::string worst_op;
  auto probe = [&](const char* op, const ScalarFn& f, const Tensor& x0, FdOptions opt = {}) {
    covered.insert(op);
    const double err = finite_diff_check(f, x0, opt);
    if (err > worst) {
      worst = err;
      worst_op = op;
    }
  };
  auto wsum = [](const Tensor& y, const Tensor& w) { return sum_all(mul(y, w)); };

  {
    Tensor b = rand_tensor({3, 4}, rng), w = rand_tensor({3, 4}, rng);
    probe("add", [&](const Tensor& x, Graph&) { return wsum(add(x, b), w); }, rand_tensor({3, 4}, rng));
    probe("sub", [&](const Tensor& x, Graph&) { return wsum(sub(b, x), w); }, rand_tensor({3, 4}, rng));
    probe("mul", [&](const Tensor& x, Graph&) { return wsum(mul(x, b), w); }, rand_tensor({3, 4}, rng));
    probe("scale", [&](const Tensor& x, Graph&) { return wsum(scale(x, 1.3), w); }, rand_tensor({3, 4}, rng));
    probe("reshape", [&](const Tensor& x, Graph&) { return wsum(reshape(x, {3, 4}), w); },
          rand_tensor({12}, rng));
    Tensor wcat = rand_tensor({6, 4}, rng);
    probe("concat", [&](const Tensor& x, Graph&) { return wsum(concat({x, b}, 0), wcat); },
          rand_tensor({3, 4}, rng));
    Tensor wtr = rand_tensor({4, 3}, rng);
    probe("transpose2", [&](const Tensor& x, Graph&) { return wsum(transpose2(x), wtr); },
          rand_tensor({3, 4}, rng));
    probe("silu", [&](const Tensor& x, Graph&) { return wsum(silu(x), w); }, rand_tensor({3, 4}, rng));
    probe("sum_all", [&](const Tensor& x, Graph&) { return sum_all(x); }, rand_tensor({3, 4}, rng));
    probe("softmax", [&](const Tensor& x, Graph&) { return wsum(softmax_lastdim(x), w); },
          rand_tensor({3, 4}, rng, -2, 2));
    probe("layer_norm", [&](const Tensor& x, Graph&) { return wsum(layer_norm(x), w); },
          rand_tensor({3, 4}, rng));
  }
  {
    Tensor b = rand_tensor({4}, rng), xc = rand_tensor({3, 4}, rng), w = rand_tensor({3, 4}, rng);
    probe("add_rowvec", [&](const Tensor& x, Graph&) { return wsum(add_rowvec(xc, x), w); },
          rand_tensor({4}, rng));
    probe("mul_rowvec", [&](const Tensor& x, Graph&) { return wsum(mul_rowvec(x, b), w); },
          rand_tensor({3, 4}, rng));
  }
  {
    Tensor b = rand_tensor({4}, rng), xc = rand_tensor({4, 2, 2}, rng), w = rand_tensor({4, 2, 2}, rng);
    probe("add_chw_bias", [&](const Tensor& x, Graph&) { return wsum(add_chw_bias(xc, x), w); },
          rand_tensor({4}, rng));
    probe("mul_chw_scale", [&](const Tensor& x, Graph&) { return wsum(mul_chw_scale(x, b), w); },
          rand_tensor({4, 2, 2}, rng));
    probe("group_norm", [&](const Tensor& x, Graph&) { return wsum(group_norm(x, 2), w); },
          rand_tensor({4, 2, 2}, rng));
    Tensor wpool = rand_tensor({4, 1, 1}, rng);
    probe("avg_pool2", [&](const Tensor& x, Graph&) { return wsum(avg_pool2(x), wpool); },
          rand_tensor({4, 2, 2}, rng));
    Tensor wup = rand_tensor({4, 4, 4}, rng);
    probe("upsample2", [&](const Tensor& x, Graph&) { return wsum(upsample2(x), wup); },
          rand_tensor({4, 2, 2}, rng));
  }
  {
    Tensor a = rand_tensor({3, 4}, rng), w = rand_tensor({3, 2}, rng);
    probe("matmul", [&](const Tensor& x, Graph&) { return wsum(matmul(a, x), w); }, rand_tensor({4, 2}, rng));
    std::vector<int32_t> ids{2, 0, 2};
    Tensor wg = rand_tensor({3, 4}, rng);
    probe("gather_rows", [&](const Tensor& x, Graph&) { return wsum(gather_rows(x, ids), wg); },
          rand_tensor({3, 4}, rng));
    Tensor xc = rand_tensor({2, 4, 4}, rng), wt = rand_tensor({3, 4, 4}, rng);
    probe("conv2d", [&](const Tensor& x, Graph&) { return wsum(conv2d(xc, x, 1), wt); },
          rand_tensor({3, 2, 3, 3}, rng));
  }
  {
    Tensor q = rand_tensor({3, 4}, rng), k = rand_tensor({4, 4}, rng), v = rand_tensor({4, 3}, rng);
    Tensor w = rand_tensor({3, 3}, rng);
    std::vector<uint8_t> mask{1, 1, 0, 1};
    probe("attention", [&](const Tensor& x, Graph&) { return wsum(attention(x, k, v, mask), w); },
          rand_tensor({3, 4}, rng));
  }

  bool all_ops = true;
  std::string missing;
  for (const char* name : registered_op_names()) {
    if (!covered.count(name)) {
      all_ops = false;
      missing += std::string(name) + " ";
    }
  }
  r.check("ops-gradcheck-coverage", all_ops, "missing ops: " + missing);
  std::ostringstream os;
  os << "worst " << worst_op << " err " << worst;
  r.check("ops-gradcheck", worst < 1e-6, os.str());
}

}  // namespace

SelftestResult run_selftest(const std::string& out_dir, uint64_t seed, int jobs,
                            const std::string& data_dir) {
  ensure_dir(out_dir);
  Runner r;

  r.guarded("ops-gradcheck", [&] { op_gradient_suite(r); });

  // --- KDE oracles ---------------------------------------------------------
  r.guarded("kde", [&] {
    RandomSource rng(71);
    const int64_t n = 100, d = 8;
    std::vector<double> rows(static_cast<size_t>(n * d));
    for (auto& v : rows) v = rng.normal();
    DensityModel m = fit_density_rows(rows, n, d);
    double worst = 0.0;
    for (int q = 0; q < 20; ++q) {
      std::vector<double> x(static_cast<size_t>(d));
      for (auto& v : x) v = rng.normal();
      worst = std::max(worst, std::abs(m.log_density(x) - naive_log_density(m, x)));
    }
    r.check("kde-bruteforce", worst <= 1e-12, "worst " + std::to_string(worst));

    DensityModel single;
    single.n = 1;
    single.dim = 1;
    single.ref = {0.4};
    single.bandwidth = {0.8};
    const double got = single.log_density({0.4});
    const double want = -std::log(0.8 * std::sqrt(2.0 * M_PI));
    r.check("kde-analytic-single-point", std::abs(got - want) <= 1e-12, std::to_string(got));

    std::vector<double> shift(static_cast<size_t>(d));
    for (auto& v : shift) v = rng.uniform(-2, 2);
    std::vector<double> shifted = rows;
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < d; ++j) shifted[static_cast<size_t>(i * d + j)] += shift[static_cast<size_t>(j)];
    }
    DensityModel ms = fit_density_rows(shifted, n, d);
    double worst_shift = 0.0;
    for (int q = 0; q < 10; ++q) {
      std::vector<double> x(static_cast<size_t>(d)), xs(static_cast<size_t>(d));
      for (int64_t j = 0; j < d; ++j) {
        x[static_cast<size_t>(j)] = rng.normal();
        xs[static_cast<size_t>(j)] = x[static_cast<size_t>(j)] + shift[static_cast<size_t>(j)];
      }
      worst_shift = std::max(worst_shift, std::abs(m.log_density(x) - ms.log_density(xs)));
    }
    r.check("kde-translation", worst_shift <= 1e-10, std::to_string(worst_shift));

    std::vector<double> unit(1024);
    for (size_t i = 0; i < unit.size(); ++i) unit[i] = (i % 2 == 0) ? 1.0 : -1.0;
    DensityModel mu = fit_density_rows(unit, 1024, 1);
    r.check("kde-scott", std::abs(mu.bandwidth[0] - std::pow(1024.0, -0.2)) <= 1e-12,
            std::to_string(mu.bandwidth[0]));

    std::vector<double> pts(12);
    for (auto& v : pts) v = rng.uniform(-2, 2);
    DensityModel m1 = fit_density_rows(pts, 12, 1);
    const double h = m1.bandwidth[0];
    double lo = *std::min_element(pts.begin(), pts.end()) - 10 * h;
    double hi = *std::max_element(pts.begin(), pts.end()) + 10 * h;
    const int64_t steps = 20000;
    const double dx = (hi - lo) / static_cast<double>(steps);
    double integral = 0.0;
    for (int64_t i = 0; i <= steps; ++i) {
      const double fx = std::exp(m1.log_density({lo + dx * static_cast<double>(i)}));
      integral += (i == 0 || i == steps) ? 0.5 * fx : fx;
    }
    integral *= dx;
    r.check("kde-quadrature", std::abs(integral - 1.0) <= 1e-4, std::to_string(integral));
  });

  // --- routing goldens -----------------------------------------------------
  r.guarded("routing", [&] {
    LayerRegistry reg = LayerRegistry::reference16();
    bool round = true;
    for (const LayerId& l : reg.layers()) round = round && (LayerId::parse(l.str()) == l);
    r.check("layer-roundtrip", round);

    const auto subsets = subset_sequence(reg);
    static const char* expect[8] = {"Empty set",
                                    "(8, 'down', 0)",
                                    "(16, 'down', 1) - (8, 'down', 0)",
                                    "(16, 'down', 1) - (16, 'up', 0)",
                                    "(16, 'down', 0) - (16, 'up', 0)",
                                    "(16, 'down', 0) - (16, 'up', 1)",
                                    "(16, 'down', 0) - (16, 'up', 2)",
                                    "(64, 'down', 0) - (64, 'up', 2)"};
    bool ok = subsets.size() == 8;
    for (size_t i = 0; ok && i < 8; ++i) ok = subsets[i].range_str(reg) == expect[i];
    r.check("subset-goldens", ok);

    const auto [a_lo, a_hi] = parse_layer_range(reg, "(16, 'down', 1) - (16, 'up', 0)");
    const auto [b_lo, b_hi] = parse_layer_range(reg, "(8, 'down', 0), (16, 'up', 0)");
    r.check("range-goldens", a_hi - a_lo + 1 == 3 && b_hi - b_lo + 1 == 2);
  });

  // --- renderer / oracle ---------------------------------------------------
  r.guarded("corpus-oracle", [&] {
    RandomSource rng(91);
    bool ok = true;
    std::string detail;
    for (size_t s = 0; s < shape_names().size() && ok; ++s) {
      for (size_t t = 0; t < texture_names().size() && ok; ++t) {
        SceneSpec spec;
        spec.shape = static_cast<ShapeKind>(s);
        spec.texture = static_cast<TextureKind>(t);
        spec.color = static_cast<int>(rng.uniform_int(11));
        spec.radius = 5 + rng.uniform_int(5);
        spec.cx = spec.radius + 1 + rng.uniform_int(32 - 2 * spec.radius - 1);
        spec.cy = spec.radius + 1 + rng.uniform_int(32 - 2 * spec.radius - 1);
        const AttributeScores res = attribute_oracle(render(spec));
        if (res.shape != shape_names()[s] || res.texture != texture_names()[t] ||
            res.color != color_names()[static_cast<size_t>(spec.color)]) {
          ok = false;
          detail = caption_of(spec);
        }
      }
    }
    r.check("oracle-render-identity", ok, detail);
  });

  // --- schedule ------------------------------------------------------------
  r.guarded("schedule", [&] {
    NoiseSchedule ns = NoiseSchedule::linear();
    bool mono = ns.abar(0) == 1.0;
    for (int64_t t = 1; t <= ns.T; ++t) {
      mono = mono && ns.abar(t) < ns.abar(t - 1) && ns.abar(t) > 0 && ns.abar(t) < 1;
    }
    r.check("schedule-monotone", mono);

    RandomSource rng(17);
    Tensor img = rand_tensor({3, 4, 4}, rng);
    const int64_t t = 450;
    const double sa = std::sqrt(ns.abar(t));
    double sum = 0, sum2 = 0;
    int64_t count = 0;
    for (int draw = 0; draw < 2200; ++draw) {
      Tensor eps = Tensor::constant(img.shape(), rng.normal_vec(img.numel()));
      Tensor xt = forward_noise(ns, img, t, eps);
      for (int64_t i = 0; i < xt.numel(); ++i) {
        const double dev = xt.at(i) - sa * img.at(i);
        sum += dev;
        sum2 += dev * dev;
        ++count;
      }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sum2 / static_cast<double>(count) - mean * mean;
    const double want = 1.0 - ns.abar(t);
    r.check("forward-noise-variance", std::abs(var - want) / want < 0.02,
            "var " + std::to_string(var) + " want " + std::to_string(want));
  });

  // --- toy model round: degeneracy, cfg, determinism, inversion -------------
  r.guarded("model-round", [&] {
    ModelConfig mc;
    mc.unet = UNetConfig::micro5();
    Model m = Model::build(Vocabulary::load_file(data_dir + "/vocabulary.txt"), mc, mix_seed(seed, 0x5e1f));
    std::vector<CaptionedImage> corpus;
    for (const SceneSpec& spec :
         corpus_specs(200, mc.unet.image_size, mix_seed(seed, 0xc0a0),
                      {{ShapeKind::Cross, color_from("yellow"), TextureKind::Solid}})) {
      corpus.push_back(CaptionedImage{render(spec), caption_of(spec)});
    }
    PretrainConfig pc;
    pc.steps = 200;
    pc.batch = 8;
    pc.jobs = jobs;
    pc.seed = mix_seed(seed, 0x77);
    pc.eval_count = 16;
    const PretrainResult pr = pretrain(m, corpus, pc);
    r.check("pretrain-decrease", pr.heldout_final < pr.heldout_initial,
            std::to_string(pr.heldout_initial) + " -> " + std::to_string(pr.heldout_final));

    ParamView pv = m.view();
    RandomSource rng(mix_seed(seed, 0x11));
    const int64_t sz = mc.unet.image_size;
    Tensor x = Tensor::constant({3, sz, sz}, rng.normal_vec(3 * sz * sz));

    PromptTemplate tmpl = m.tokenize("green circle, checker");
    Tensor ext = m.predict_noise(pv, x, 333, ExtendedPrompt::broadcast(m.registry, LayerSpec{tmpl, Tensor()}));
    Tensor ctx = m.encode(pv, tmpl, nullptr);
    LayerContexts lc;
    lc.ctx.assign(static_cast<size_t>(m.registry.size()), ctx);
    lc.mask.assign(static_cast<size_t>(m.registry.size()), tmpl.mask);
    r.check("broadcast-bitexact", ext.same_bits(m.predict_noise_ctx(pv, x, 333, lc)));

    ExtendedPrompt p = m.broadcast_prompt("red square, solid");
    Tensor cond = m.predict_noise(pv, x, 250, p);
    Tensor uncond = m.predict_noise(pv, x, 250, m.broadcast_prompt(""));
    Tensor w1 = m.cfg_predict(pv, x, 250, p, 1.0);
    Tensor w0 = m.cfg_predict(pv, x, 250, p, 0.0);
    Tensor w75 = m.cfg_predict(pv, x, 250, p, 7.5);
    double worst = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
      worst = std::max(worst, std::abs(w1.at(i) - cond.at(i)));
      worst = std::max(worst, std::abs(w0.at(i) - uncond.at(i)));
      worst = std::max(worst, std::abs(w75.at(i) - (uncond.at(i) + 7.5 * (cond.at(i) - uncond.at(i)))));
    }
    r.check("cfg-identities", worst <= 1e-12, std::to_string(worst));

    SamplerConfig sc{10, 7.5, mix_seed(seed, 0x5a)};
    Tensor img1 = ddim_sample(m, p, sc);
    r.check("sampling-determinism", img1.same_bits(ddim_sample(m, p, sc)));
    r.check("mix-degeneracy", ddim_sample(m, mix_extended(p, p, MixSpec{2, 4}), sc).same_bits(img1));
    write_png(out_dir + "/selftest_sample.png", img1);

    const uint64_t checksum_before = m.checksum();
    ConceptRender cr = make_concept({ShapeKind::Cross, color_from("yellow"), TextureKind::Solid}, 3,
                                    mix_seed(seed, 0xcc), sz);
    InversionConfig icfg;
    icfg.mode = InversionMode::XTI;
    icfg.steps = 25;
    icfg.batch = 4;
    icfg.jobs = jobs;
    icfg.seed = mix_seed(seed, 0x1e);
    icfg.templates = {"a photo of <token>"};
    icfg.init_word = cr.shape_word;
    InvertedConcept c = invert(m, ConceptDataset{cr.images, cr.shape_word}, icfg);
    r.check("frozen-model", m.checksum() == checksum_before);
    r.check("inversion-finite", std::isfinite(c.final_loss));

    // tied single embedding reproduces the TI loss bit-exactly
    std::vector<PromptTemplate> bank = {m.tokenize("a photo of <token>")};
    XtiBatchItem item = draw_batch_item(mix_seed(seed, 0x7e), 0, 0, 3, 1, m.cfg.T, cr.images[0].shape());
    Graph g;
    ParamView pvg(m.params, &g, false);
    Tensor leaf = g.leaf({m.cfg.enc.d}, embed_init(m, "coarse-word", "cross", 1)[0], true);
    Tensor loss_x = xti_loss(m, pvg, cr.images, bank, {leaf}, {item});
    Tensor xt = forward_noise(m.schedule, cr.images[static_cast<size_t>(item.image_index)], item.t, item.eps);
    Tensor cctx = m.encode(pvg, bank[0], &leaf);
    LayerContexts lc2;
    lc2.ctx.assign(static_cast<size_t>(m.registry.size()), cctx);
    lc2.mask.assign(static_cast<size_t>(m.registry.size()), bank[0].mask);
    Tensor loss_ti = noise_mse(item.eps, m.predict_noise_ctx(pvg, xt, item.t, lc2));
    r.check("ti-tie-bitexact", loss_x.same_bits(loss_ti));

    // encode substitution identity
    Tensor cat_row = Tensor::constant({m.cfg.enc.d}, embed_init(m, "coarse-word", "cat", 1)[0]);
    PromptTemplate ph = m.tokenize("a <token>");
    r.check("encode-substitution", m.encode(pv, ph, &cat_row).same_bits(m.encode(pv, m.tokenize("a cat"), nullptr)));

    // density report artifact over the pretrained table
    LookupTable table(m.params.at("lookup.table").value, m.vocab.natural_size(), m.cfg.enc.d);
    DensityModel dm = fit_density(table);
    std::vector<LabeledEmbedding> extra;
    for (size_t i = 0; i < c.embeddings.size(); ++i) {
      extra.push_back(LabeledEmbedding{"xti", static_cast<int64_t>(i), c.embeddings[i]});
    }
    const auto rows = density_report(dm, table, extra);
    std::ostringstream csv;
    csv << "token_id,group,layer,log_density,percentile\n";
    for (size_t i = 0; i < 8 && i < rows.size(); ++i) {
      csv << rows[i].token_id << "," << rows[i].group << "," << rows[i].layer << ","
          << rows[i].log_density << "," << rows[i].percentile << "\n";
    }
    atomic_write(out_dir + "/selftest_density_head.csv", csv.str());
    r.check("density-report", rows.size() == static_cast<size_t>(table.natural_rows()) + c.embeddings.size());
  });

  std::ostringstream report;
  for (const auto& [name, ok] : r.result.checks) {
    report << (ok ? "PASS " : "FAIL ") << name << "\n";
  }
  for (const auto& d : r.result.details) report << "# " << d << "\n";
  report << (r.result.all_passed() ? "ALL CHECKS PASSED\n" : "CHECKS FAILED\n");
  atomic_write(out_dir + "/selftest_report.txt", report.str());
  return r.result;
}

}  // namespace pplus

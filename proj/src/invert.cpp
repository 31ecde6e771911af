#include "pplus/invert.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "pplus/adam.hpp"
#include "pplus/fsutil.hpp"
#include "pplus/ops.hpp"
#include "pplus/rng.hpp"

namespace pplus {

const char* mode_name(InversionMode m) { return m == InversionMode::TI ? "ti" : "xti"; }

InversionMode mode_from(const std::string& s) {
  if (s == "ti") return InversionMode::TI;
  if (s == "xti") return InversionMode::XTI;
  throw std::invalid_argument("unknown inversion mode '" + s + "'");
}

InversionConfig InversionConfig::resolved(int64_t dataset_size) const {
  InversionConfig c = *this;
  if (dataset_size == 1) c.single_image = true;
  if (c.lr <= 0) c.lr = c.single_image ? 0.001 : 0.005;
  if (c.steps < 0) c.steps = (c.mode == InversionMode::TI) ? 5000 : 500;
  if (c.templates.empty()) c.templates = {"a photo of <token>"};
  if (c.batch < 1) throw std::invalid_argument("batch size must be positive");
  return c;
}

std::vector<std::vector<double>> embed_init(const Model& m, const std::string& strategy,
                                            const std::string& word, int64_t count) {
  const int64_t d = m.cfg.enc.d;
  const auto& table = *m.params.at("lookup.table").value;
  std::vector<double> base(static_cast<size_t>(d), 0.0);
  if (strategy == "zeros") {
    // keep zeros
  } else if (strategy == "mean-of-table") {
    const int64_t v = m.vocab.natural_size();
    for (int64_t r = 0; r < v; ++r) {
      for (int64_t j = 0; j < d; ++j) base[static_cast<size_t>(j)] += table[static_cast<size_t>(r * d + j)];
    }
    for (double& x : base) x /= static_cast<double>(v);
  } else if (strategy == "coarse-word") {
    const int32_t id = m.vocab.id_of(word);  // throws for an unknown word
    for (int64_t j = 0; j < d; ++j) base[static_cast<size_t>(j)] = table[static_cast<size_t>(id * d + j)];
  } else {
    throw std::invalid_argument("unknown init strategy '" + strategy + "'");
  }
  return std::vector<std::vector<double>>(static_cast<size_t>(count), base);
}

Tensor noise_mse(const Tensor& eps, const Tensor& eps_hat) {
  Tensor d = sub(eps, eps_hat);
  return scale(sum_all(mul(d, d)), 1.0 / static_cast<double>(d.numel()));
}

XtiBatchItem draw_batch_item(uint64_t seed, int64_t step, int64_t b, int64_t n_images,
                             int64_t n_templates, int64_t T, const Shape& img_shape) {
  RandomSource rng(mix_seed(seed, static_cast<uint64_t>(step), static_cast<uint64_t>(b)));
  XtiBatchItem item;
  item.image_index = rng.uniform_int(n_images);
  item.template_index = rng.uniform_int(n_templates);
  item.t = 1 + rng.uniform_int(T);
  item.eps = Tensor::constant(img_shape, rng.normal_vec(shape_numel(img_shape)));
  return item;
}

Tensor xti_loss(const Model& m, ParamView& pv, const std::vector<Tensor>& images,
                const std::vector<PromptTemplate>& templates,
                const std::vector<Tensor>& layer_embeddings, const std::vector<XtiBatchItem>& batch) {
  if (batch.empty()) throw std::invalid_argument("xti_loss: empty batch");
  if (layer_embeddings.empty()) throw std::invalid_argument("xti_loss: no embeddings");
  const int64_t n = m.registry.size();
  if (static_cast<int64_t>(layer_embeddings.size()) != n && layer_embeddings.size() != 1) {
    throw std::invalid_argument("xti_loss: need 1 or n per-layer embeddings");
  }
  Tensor total;
  for (const XtiBatchItem& item : batch) {
    const Tensor& img = images.at(static_cast<size_t>(item.image_index));
    const PromptTemplate& tmpl = templates.at(static_cast<size_t>(item.template_index));
    Tensor xt = forward_noise(m.schedule, img, item.t, item.eps);
    std::vector<LayerSpec> specs;
    specs.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      const Tensor& e = layer_embeddings.size() == 1 ? layer_embeddings[0]
                                                     : layer_embeddings[static_cast<size_t>(i)];
      specs.push_back(LayerSpec{tmpl, e});
    }
    Tensor eps_hat = m.predict_noise(pv, xt, item.t, ExtendedPrompt::per_layer(m.registry, std::move(specs)));
    Tensor item_loss = noise_mse(item.eps, eps_hat);
    total = total.defined() ? add(total, item_loss) : item_loss;
  }
  return scale(total, 1.0 / static_cast<double>(batch.size()));
}

double xti_eval_loss(const Model& m, const std::vector<Tensor>& images,
                     const std::vector<PromptTemplate>& templates,
                     const std::vector<std::vector<double>>& embeddings, int64_t count, uint64_t seed) {
  ParamView pv = m.view();
  std::vector<Tensor> consts;
  for (const auto& e : embeddings) consts.push_back(Tensor::constant({m.cfg.enc.d}, e));
  double total = 0.0;
  for (int64_t j = 0; j < count; ++j) {
    XtiBatchItem item = draw_batch_item(mix_seed(seed, 0xe7a1), j, 0, static_cast<int64_t>(images.size()),
                                        static_cast<int64_t>(templates.size()), m.cfg.T, images[0].shape());
    total += xti_loss(m, pv, images, templates, consts, {item}).value();
  }
  return total / static_cast<double>(count);
}

namespace {

struct ItemGrad {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;  // one per embedding
};

}  // namespace

InvertedConcept invert(const Model& m, const ConceptDataset& data, const InversionConfig& raw_cfg) {
  if (data.images.empty()) throw std::invalid_argument("concept dataset is empty");
  for (const Tensor& img : data.images) {
    if (img.shape() != Shape{m.cfg.unet.image_channels, m.cfg.unet.image_size, m.cfg.unet.image_size}) {
      throw std::invalid_argument("concept image shape " + shape_str(img.shape()) +
                                  " does not match the model");
    }
  }
  InversionConfig cfg = raw_cfg.resolved(static_cast<int64_t>(data.images.size()));
  std::vector<Tensor> images = data.images;
  if (cfg.single_image) images.resize(1);

  const int64_t n_emb = cfg.mode == InversionMode::XTI ? m.registry.size() : 1;
  std::string init_word = cfg.init_word.empty() ? data.init_word_hint : cfg.init_word;
  if (cfg.init == "coarse-word" && init_word.empty()) {
    throw std::invalid_argument("coarse-word init needs an init word");
  }
  std::vector<std::vector<double>> emb = embed_init(m, cfg.init, init_word, n_emb);

  std::vector<PromptTemplate> templates;
  for (const std::string& t : cfg.templates) {
    PromptTemplate pt = m.tokenize(t);
    if (!pt.has_placeholder()) {
      throw std::invalid_argument("inversion template lacks a placeholder: '" + t + "'");
    }
    templates.push_back(std::move(pt));
  }

  DensityModel density;
  if (cfg.reg_lambda > 0) {
    density = fit_density(LookupTable(m.params.at("lookup.table").value, m.vocab.natural_size(), m.cfg.enc.d));
  }

  Adam opt(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  const int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(cfg.batch)));
  const int64_t eval_count = 32;
  InvertedConcept out;
  out.mode = cfg.mode;
  out.dim = m.cfg.enc.d;
  out.registry_fp = m.registry.fingerprint();
  for (const auto& l : m.registry.layers()) out.registry_names.push_back(l.str());
  out.eval_initial = xti_eval_loss(m, images, templates, emb, eval_count, cfg.seed);

  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<ItemGrad> results(static_cast<size_t>(cfg.batch));
    auto worker = [&](int tid) {
      for (int64_t b = tid; b < cfg.batch; b += jobs) {
        XtiBatchItem item =
            draw_batch_item(cfg.seed, step, b, static_cast<int64_t>(images.size()),
                            static_cast<int64_t>(templates.size()), m.cfg.T, images[0].shape());

        Graph g;
        ParamView pv(const_cast<ParamStore&>(m.params), &g, /*trainable=*/false);  // model stays frozen
        std::vector<Tensor> leaves;
        leaves.reserve(static_cast<size_t>(n_emb));
        for (int64_t i = 0; i < n_emb; ++i) {
          leaves.push_back(g.leaf({m.cfg.enc.d}, emb[static_cast<size_t>(i)], /*requires_grad=*/true));
        }
        Tensor loss = xti_loss(m, pv, images, templates, leaves, {item});
        GradientMap grads = g.backward(loss);
        ItemGrad& ig = results[static_cast<size_t>(b)];
        ig.loss = loss.value();
        for (int64_t i = 0; i < n_emb; ++i) {
          ig.grads.push_back(grads.at(leaves[static_cast<size_t>(i)].node()).data());
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

    double batch_loss = 0.0;
    std::vector<std::vector<double>> acc(static_cast<size_t>(n_emb),
                                         std::vector<double>(static_cast<size_t>(m.cfg.enc.d), 0.0));
    for (int64_t b = 0; b < cfg.batch; ++b) {
      const ItemGrad& ig = results[static_cast<size_t>(b)];
      batch_loss += ig.loss;
      for (int64_t i = 0; i < n_emb; ++i) {
        for (int64_t j = 0; j < m.cfg.enc.d; ++j) {
          acc[static_cast<size_t>(i)][static_cast<size_t>(j)] +=
              ig.grads[static_cast<size_t>(i)][static_cast<size_t>(j)];
        }
      }
    }
    batch_loss /= static_cast<double>(cfg.batch);
    if (!std::isfinite(batch_loss)) {
      throw std::runtime_error("non-finite inversion loss at step " + std::to_string(step));
    }

    double reg_value = 0.0;
    const double inv_b = 1.0 / static_cast<double>(cfg.batch);
    for (int64_t i = 0; i < n_emb; ++i) {
      for (double& v : acc[static_cast<size_t>(i)]) v *= inv_b;
      if (cfg.reg_lambda > 0) {
        // d/de of (-lambda * log p_E(e)); reconstruction gradient minus
        // lambda times the density ascent direction
        const std::vector<double> dg = density.log_density_grad(emb[static_cast<size_t>(i)]);
        reg_value -= cfg.reg_lambda * density.log_density(emb[static_cast<size_t>(i)]);
        for (int64_t j = 0; j < m.cfg.enc.d; ++j) {
          acc[static_cast<size_t>(i)][static_cast<size_t>(j)] -= cfg.reg_lambda * dg[static_cast<size_t>(j)];
        }
      }
    }

    opt.begin_step();
    for (int64_t i = 0; i < n_emb; ++i) {
      opt.update(emb[static_cast<size_t>(i)], acc[static_cast<size_t>(i)]);
    }
    out.recon_trajectory.push_back(batch_loss);
    out.reg_trajectory.push_back(reg_value);
  }

  out.eval_final = xti_eval_loss(m, images, templates, emb, eval_count, cfg.seed);
  out.embeddings = std::move(emb);
  if (!out.recon_trajectory.empty()) {
    const size_t w = std::min<size_t>(50, out.recon_trajectory.size());
    double s = 0.0;
    for (size_t i = out.recon_trajectory.size() - w; i < out.recon_trajectory.size(); ++i) {
      s += out.recon_trajectory[i];
    }
    out.final_loss = s / static_cast<double>(w);
  }
  nlohmann::json echo{{"mode", mode_name(cfg.mode)}, {"lr", cfg.lr},       {"steps", cfg.steps},
                      {"batch", cfg.batch},          {"reg_lambda", cfg.reg_lambda},
                      {"init", cfg.init},            {"init_word", init_word},
                      {"seed", cfg.seed},            {"single_image", cfg.single_image},
                      {"templates", cfg.templates}};
  out.config_echo = echo.dump();
  return out;
}

ExtendedPrompt InvertedConcept::prompt_for(const Model& m, const std::string& template_text) const {
  if (registry_fp != m.registry.fingerprint()) {
    throw std::invalid_argument("concept was inverted on a different registry");
  }
  PromptTemplate tmpl = m.tokenize(template_text);
  if (!tmpl.has_placeholder()) {
    throw std::invalid_argument("template lacks a placeholder: '" + template_text + "'");
  }
  std::vector<LayerSpec> specs;
  for (int64_t i = 0; i < m.registry.size(); ++i) {
    const auto& e = embeddings.size() == 1 ? embeddings[0] : embeddings[static_cast<size_t>(i)];
    specs.push_back(LayerSpec{tmpl, Tensor::constant({dim}, e)});
  }
  return ExtendedPrompt::per_layer(m.registry, std::move(specs));
}

namespace {

std::string hex_encode(const std::vector<double>& v) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(v.size() * 16);
  const unsigned char* bytes = reinterpret_cast<const unsigned char*>(v.data());
  for (size_t i = 0; i < v.size() * sizeof(double); ++i) {
    out += digits[bytes[i] >> 4];
    out += digits[bytes[i] & 0xf];
  }
  return out;
}

std::vector<double> hex_decode(const std::string& s) {
  if (s.size() % 16 != 0) throw std::runtime_error("bad embedding hex length");
  auto nib = [](char c) -> unsigned {
    if (c >= '0' && c <= '9') return static_cast<unsigned>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<unsigned>(c - 'a' + 10);
    throw std::runtime_error("bad hex digit in embedding");
  };
  std::vector<double> v(s.size() / 16);
  unsigned char* bytes = reinterpret_cast<unsigned char*>(v.data());
  for (size_t i = 0; i < s.size() / 2; ++i) {
    bytes[i] = static_cast<unsigned char>((nib(s[2 * i]) << 4) | nib(s[2 * i + 1]));
  }
  return v;
}

}  // namespace

void InvertedConcept::save(const std::string& path) const {
  std::ostringstream os;
  os << "pplus-concept 1\n";
  os << "mode: " << mode_name(mode) << "\n";
  os << "dim: " << dim << "\n";
  os << "count: " << embeddings.size() << "\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", final_loss);
  os << "final_loss: " << buf << "\n";
  os << "config: " << config_echo << "\n";
  os << "registry: " << registry_fp << "\n";
  for (size_t i = 0; i < embeddings.size(); ++i) {
    os << "e" << i << ": " << hex_encode(embeddings[i]) << "\n";
  }
  atomic_write(path, os.str());
}

InvertedConcept InvertedConcept::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open concept file " + path);
  std::string line;
  if (!std::getline(in, line) || line != "pplus-concept 1") {
    throw std::runtime_error("not a concept file: " + path);
  }
  InvertedConcept c;
  size_t count = 0;
  while (std::getline(in, line)) {
    const auto colon = line.find(": ");
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    const std::string val = line.substr(colon + 2);
    if (key == "mode") {
      c.mode = mode_from(val);
    } else if (key == "dim") {
      c.dim = std::stoll(val);
    } else if (key == "count") {
      count = static_cast<size_t>(std::stoull(val));
    } else if (key == "final_loss") {
      c.final_loss = std::stod(val);
    } else if (key == "config") {
      c.config_echo = val;
    } else if (key == "registry") {
      c.registry_fp = val;
    } else if (key.size() > 1 && key[0] == 'e') {
      c.embeddings.push_back(hex_decode(val));
    }
  }
  if (c.embeddings.size() != count) throw std::runtime_error("concept file embedding count mismatch");
  for (const auto& e : c.embeddings) {
    if (static_cast<int64_t>(e.size()) != c.dim) throw std::runtime_error("concept embedding size mismatch");
    for (double x : e) {
      if (!std::isfinite(x)) throw std::runtime_error("non-finite embedding in concept file");
    }
  }
  std::string fp = c.registry_fp;
  std::string part;
  for (char ch : fp + ";") {
    if (ch == ';') {
      if (!part.empty()) c.registry_names.push_back(LayerId::parse(part).str());
      part.clear();
    } else {
      part += ch;
    }
  }
  return c;
}

}  // namespace pplus

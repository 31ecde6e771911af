#include "pplus/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace pplus {

MassSink::MassSink(std::vector<TokenClass> labels, MassOptions opt)
    : labels_(std::move(labels)), opt_(opt) {}

void MassSink::record(const LayerId& layer, int /*head*/, int64_t timestep, const Tensor& weights,
                      const std::vector<uint8_t>& /*key_mask*/) {
  const int64_t nq = weights.dim(0), nk = weights.dim(1);
  if (static_cast<size_t>(nk) != labels_.size()) {
    throw std::invalid_argument("attention weights cover " + std::to_string(nk) +
                                " keys but " + std::to_string(labels_.size()) + " labels were given");
  }
  const std::string key = layer.str();
  layer_of_.emplace(key, layer);
  Cell& cell = cells_[{key, timestep}];
  if (cell.sum.empty()) cell.sum.assign(static_cast<size_t>(nk), 0.0);
  // mean over spatial queries for this head
  for (int64_t j = 0; j < nk; ++j) {
    double s = 0.0;
    for (int64_t q = 0; q < nq; ++q) s += weights.at(q * nk + j);
    cell.sum[static_cast<size_t>(j)] += s / static_cast<double>(nq);
  }
  cell.count += 1;  // heads
}

std::vector<AttentionRecord> MassSink::finish() const {
  std::vector<AttentionRecord> out;
  for (const auto& [key, cell] : cells_) {
    AttentionRecord rec;
    rec.layer = layer_of_.at(key.first);
    rec.timestep = key.second;
    rec.token_labels = labels_;
    rec.token_mass.resize(cell.sum.size());
    for (size_t j = 0; j < cell.sum.size(); ++j) {
      rec.token_mass[j] = cell.sum[j] / static_cast<double>(cell.count);
    }
    if (!opt_.include_specials) {
      double content = 0.0;
      for (size_t j = 0; j < rec.token_mass.size(); ++j) {
        if (labels_[j] != TokenClass::Special) content += rec.token_mass[j];
      }
      if (content > 0) {
        for (size_t j = 0; j < rec.token_mass.size(); ++j) {
          rec.token_mass[j] = labels_[j] == TokenClass::Special ? 0.0 : rec.token_mass[j] / content;
        }
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::map<std::string, double> ratio_from_records(const std::vector<AttentionRecord>& records,
                                                 const MassOptions& opt) {
  struct Acc {
    double obj = 0, app = 0;
    int64_t n = 0;
  };
  std::map<std::string, Acc> acc;
  for (const AttentionRecord& rec : records) {
    double obj = 0, app = 0;
    int64_t nobj = 0, napp = 0;
    for (size_t j = 0; j < rec.token_mass.size(); ++j) {
      if (rec.token_labels[j] == TokenClass::Object) {
        obj += rec.token_mass[j];
        ++nobj;
      } else if (rec.token_labels[j] == TokenClass::Appearance) {
        app += rec.token_mass[j];
        ++napp;
      }
    }
    if (nobj == 0 || napp == 0) continue;
    if (!opt.span_sum) {
      obj /= static_cast<double>(nobj);
      app /= static_cast<double>(napp);
    }
    Acc& a = acc[rec.layer.str()];
    a.obj += obj;
    a.app += app;
    a.n += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [layer, a] : acc) {
    if (a.n == 0 || a.app == 0) continue;
    out[layer] = (a.obj / static_cast<double>(a.n)) / (a.app / static_cast<double>(a.n));
  }
  return out;
}

RatioReport attention_ratio(const Model& m, const std::vector<std::string>& prompts,
                            const std::vector<std::string>& object_words,
                            const std::vector<std::string>& appearance_words, const RatioConfig& cfg) {
  const std::set<std::string> objs(object_words.begin(), object_words.end());
  const std::set<std::string> apps(appearance_words.begin(), appearance_words.end());

  RatioReport report;
  std::vector<AttentionRecord> all_records;
  for (const std::string& prompt : prompts) {
    PromptTemplate tmpl = m.tokenize(prompt);
    std::vector<TokenClass> labels(tmpl.ids.size(), TokenClass::Special);
    bool has_obj = false, has_app = false;
    for (size_t w = 0; w < tmpl.words.size(); ++w) {
      TokenClass cls = TokenClass::Other;
      if (objs.count(tmpl.words[w])) {
        cls = TokenClass::Object;
        has_obj = true;
      } else if (apps.count(tmpl.words[w])) {
        cls = TokenClass::Appearance;
        has_app = true;
      }
      labels[static_cast<size_t>(tmpl.word_pos[w])] = cls;
    }
    if (!has_obj || !has_app) {
      report.skipped.push_back(prompt + (has_obj ? " (no appearance span)" : " (no object span)"));
      continue;
    }
    for (uint64_t seed : cfg.seeds) {
      MassSink sink(labels, cfg.mass);
      SamplerConfig sc{cfg.steps, cfg.guidance, seed};
      ddim_sample(m, ExtendedPrompt::broadcast(m.registry, LayerSpec{tmpl, Tensor()}), sc, &sink);
      auto recs = sink.finish();
      all_records.insert(all_records.end(), recs.begin(), recs.end());
    }
    report.prompts_used += 1;
  }
  const auto ratios = ratio_from_records(all_records, cfg.mass);
  for (const LayerId& l : m.registry.layers()) {
    const auto it = ratios.find(l.str());
    report.ratios.emplace_back(l, it == ratios.end() ? 0.0 : it->second);
  }
  return report;
}

std::vector<SweepRow> subset_sweep(const Model& m, const std::vector<PromptPair>& pairs,
                                   const SweepConfig& cfg, Embedder& embedder) {
  const std::vector<LayerSubset> subsets = subset_sequence(m.registry);
  std::vector<SweepRow> rows;
  for (size_t si = 0; si < subsets.size(); ++si) {
    SweepRow row;
    row.subset_index = static_cast<int>(si);
    int64_t count = 0;
    for (const PromptPair& pair : pairs) {
      LayerSpec s1{m.tokenize(pair.prompt1), Tensor()};
      LayerSpec s2{m.tokenize(pair.prompt2), Tensor()};
      std::vector<LayerSpec> specs;
      for (int64_t li = 0; li < m.registry.size(); ++li) {
        specs.push_back(subsets[si].contains(m.registry.at(li)) ? s2 : s1);
      }
      ExtendedPrompt p = ExtendedPrompt::per_layer(m.registry, std::move(specs));
      for (uint64_t seed : cfg.seeds) {
        Tensor img = ddim_sample(m, p, SamplerConfig{cfg.steps, cfg.guidance, seed});
        try {
          auto score = [&](AttrKind kind, const std::string& term) {
            return cosine(embedder.embed_image_attr(img, kind), embedder.embed_text_attr(term, kind));
          };
          row.object_p1 += score(AttrKind::Object, pair.object1);
          row.object_p2 += score(AttrKind::Object, pair.object2);
          row.color_p1 += score(AttrKind::Color, pair.color1);
          row.color_p2 += score(AttrKind::Color, pair.color2);
          row.style_p1 += score(AttrKind::Style, pair.style1);
          row.style_p2 += score(AttrKind::Style, pair.style2);
          ++count;
        } catch (const std::exception&) {
          row.missing = true;
        }
      }
    }
    if (count > 0) {
      const double inv = 1.0 / static_cast<double>(count);
      row.object_p1 *= inv;
      row.object_p2 *= inv;
      row.color_p1 *= inv;
      row.color_p2 *= inv;
      row.style_p1 *= inv;
      row.style_p2 *= inv;
    } else {
      row.missing = true;
    }
    rows.push_back(row);
  }
  return rows;
}

double text_similarity(const std::vector<Tensor>& images, const std::string& prompt, Embedder& embedder) {
  if (images.empty()) throw std::invalid_argument("text_similarity needs at least one image");
  const std::vector<double> tv = embedder.embed_text(prompt);
  double total = 0.0;
  for (const Tensor& img : images) total += cosine(embedder.embed_image(img), tv);
  return total / static_cast<double>(images.size());
}

double subject_similarity(const std::vector<Tensor>& generated, const std::vector<Tensor>& references,
                          Embedder& embedder) {
  if (generated.empty() || references.empty()) {
    throw std::invalid_argument("subject_similarity needs nonempty image sets");
  }
  std::vector<std::vector<double>> gv, rv;
  for (const Tensor& g : generated) gv.push_back(embedder.embed_image(g));
  for (const Tensor& r : references) rv.push_back(embedder.embed_image(r));
  double total = 0.0;
  for (const auto& g : gv) {
    for (const auto& r : rv) total += cosine(g, r);
  }
  return total / static_cast<double>(gv.size() * rv.size());
}

}  // namespace pplus

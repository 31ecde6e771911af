#include "pplus/embedder.hpp"

#include <cmath>
#include <stdexcept>

#include "pplus/corpus.hpp"
#include "pplus/vocab.hpp"

namespace pplus {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> l2_normalized(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  if (n < 1e-24) {
    // no signal: fall back to the uniform unit vector
    const double u = 1.0 / std::sqrt(static_cast<double>(v.size()));
    for (double& x : v) x = u;
    return v;
  }
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

namespace {

// texture words double as the free-text "style" vocabulary of the toy corpus
int index_of(const std::vector<std::string>& names, const std::string& w) {
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == w) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

std::vector<double> OracleEmbedder::embed_image(const Tensor& img) {
  const AttributeScores s = attribute_oracle(img);
  std::vector<double> v;
  v.insert(v.end(), s.shape_scores.begin(), s.shape_scores.end());
  v.insert(v.end(), s.color_scores.begin(), s.color_scores.end());
  v.insert(v.end(), s.texture_scores.begin(), s.texture_scores.end());
  return l2_normalized(std::move(v));
}

std::vector<double> OracleEmbedder::embed_text(const std::string& text) {
  const size_t ns = shape_names().size(), nc = color_names().size(), nt = texture_names().size();
  std::vector<double> v(ns + nc + nt, 0.0);
  for (const std::string& w : split_prompt_words(text)) {
    int i = index_of(shape_names(), w);
    if (i >= 0) v[static_cast<size_t>(i)] = 1.0;
    i = index_of(color_names(), w);
    if (i >= 0) v[ns + static_cast<size_t>(i)] = 1.0;
    i = index_of(texture_names(), w);
    if (i >= 0) v[ns + nc + static_cast<size_t>(i)] = 1.0;
  }
  return l2_normalized(std::move(v));
}

std::vector<double> OracleEmbedder::embed_image_attr(const Tensor& img, AttrKind kind) {
  const AttributeScores s = attribute_oracle(img);
  switch (kind) {
    case AttrKind::Object:
      return l2_normalized(s.shape_scores);
    case AttrKind::Color:
      return l2_normalized(s.color_scores);
    case AttrKind::Style:
      return l2_normalized(s.texture_scores);
  }
  throw std::invalid_argument("bad attribute kind");
}

std::vector<double> OracleEmbedder::embed_text_attr(const std::string& term, AttrKind kind) {
  const std::vector<std::string>* names = nullptr;
  switch (kind) {
    case AttrKind::Object:
      names = &shape_names();
      break;
    case AttrKind::Color:
      names = &color_names();
      break;
    case AttrKind::Style:
      names = &texture_names();
      break;
  }
  std::vector<double> v(names->size(), 0.0);
  for (const std::string& w : split_prompt_words(term)) {
    const int i = index_of(*names, w);
    if (i >= 0) v[static_cast<size_t>(i)] = 1.0;
  }
  return l2_normalized(std::move(v));
}

}  // namespace pplus

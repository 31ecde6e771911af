#pragma once

#include <string>
#include <vector>

#include "pplus/tensor.hpp"

namespace pplus {

enum class AttrKind { Object, Color, Style };

// Image/text -> unit vector, plus per-attribute sub-embeddings for the
// sweep drivers. Outputs are L2-normalized within 1e-9.
struct Embedder {
  virtual ~Embedder() = default;
  virtual std::vector<double> embed_image(const Tensor& img) = 0;
  virtual std::vector<double> embed_text(const std::string& text) = 0;
  virtual std::vector<double> embed_image_attr(const Tensor& img, AttrKind kind) = 0;
  virtual std::vector<double> embed_text_attr(const std::string& term, AttrKind kind) = 0;
};

// Built on the corpus generator's own attribute classifier: the image vector
// concatenates the shape/color/texture confidence blocks; text vectors place
// recognized attribute words into the same slots. No pretrained weights.
class OracleEmbedder : public Embedder {
 public:
  std::vector<double> embed_image(const Tensor& img) override;
  std::vector<double> embed_text(const std::string& text) override;
  std::vector<double> embed_image_attr(const Tensor& img, AttrKind kind) override;
  std::vector<double> embed_text_attr(const std::string& term, AttrKind kind) override;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);
std::vector<double> l2_normalized(std::vector<double> v);

}  // namespace pplus

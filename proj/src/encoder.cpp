#include "pplus/encoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pplus/ops.hpp"

namespace pplus {

void TextEncoder::register_params(ParamStore& s, RandomSource& rng) const {
  const int64_t d = cfg_.d;
  const int64_t dh = d / cfg_.heads;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  s.add_normal("enc.pos", {cfg_.seq_len, d}, rng, 0.02);
  for (int64_t b = 0; b < cfg_.blocks; ++b) {
    const std::string p = "enc.b" + std::to_string(b) + ".";
    s.add_full(p + "ln1.g", {d}, 1.0);
    s.add_zeros(p + "ln1.b", {d});
    for (int64_t h = 0; h < cfg_.heads; ++h) {
      const std::string hp = p + "h" + std::to_string(h) + ".";
      s.add_normal(hp + "wq", {d, dh}, rng, w_std);
      s.add_normal(hp + "wk", {d, dh}, rng, w_std);
      s.add_normal(hp + "wv", {d, dh}, rng, w_std);
    }
    s.add_normal(p + "attn.wo", {d, d}, rng, w_std);
    s.add_zeros(p + "attn.bo", {d});
    s.add_full(p + "ln2.g", {d}, 1.0);
    s.add_zeros(p + "ln2.b", {d});
    s.add_normal(p + "mlp.w1", {d, cfg_.mlp_hidden}, rng, w_std);
    s.add_zeros(p + "mlp.b1", {cfg_.mlp_hidden});
    s.add_normal(p + "mlp.w2", {cfg_.mlp_hidden, d}, rng,
                 1.0 / std::sqrt(static_cast<double>(cfg_.mlp_hidden)));
    s.add_zeros(p + "mlp.b2", {d});
  }
  s.add_full("enc.lnf.g", {d}, 1.0);
  s.add_zeros("enc.lnf.b", {d});
}

Tensor TextEncoder::forward(ParamView& pv, const Tensor& rows, const std::vector<uint8_t>& mask) const {
  if (rows.rank() != 2 || rows.dim(0) != cfg_.seq_len || rows.dim(1) != cfg_.d) {
    throw std::invalid_argument("encoder input must be (" + std::to_string(cfg_.seq_len) + "," +
                                std::to_string(cfg_.d) + "), got " + shape_str(rows.shape()));
  }
  if (static_cast<int64_t>(mask.size()) != cfg_.seq_len) {
    throw std::invalid_argument("encoder mask length mismatch");
  }
  Tensor x = add(rows, pv["enc.pos"]);
  for (int64_t b = 0; b < cfg_.blocks; ++b) {
    const std::string p = "enc.b" + std::to_string(b) + ".";
    Tensor h = add_rowvec(mul_rowvec(layer_norm(x), pv[p + "ln1.g"]), pv[p + "ln1.b"]);
    std::vector<Tensor> heads;
    for (int64_t hd = 0; hd < cfg_.heads; ++hd) {
      const std::string hp = p + "h" + std::to_string(hd) + ".";
      Tensor q = matmul(h, pv[hp + "wq"]);
      Tensor k = matmul(h, pv[hp + "wk"]);
      Tensor v = matmul(h, pv[hp + "wv"]);
      heads.push_back(attention(q, k, v, mask));
    }
    Tensor att = add_rowvec(matmul(concat(heads, 1), pv[p + "attn.wo"]), pv[p + "attn.bo"]);
    x = add(x, att);
    Tensor h2 = add_rowvec(mul_rowvec(layer_norm(x), pv[p + "ln2.g"]), pv[p + "ln2.b"]);
    Tensor m = silu(add_rowvec(matmul(h2, pv[p + "mlp.w1"]), pv[p + "mlp.b1"]));
    Tensor out = add_rowvec(matmul(m, pv[p + "mlp.w2"]), pv[p + "mlp.b2"]);
    x = add(x, out);
  }
  return add_rowvec(mul_rowvec(layer_norm(x), pv["enc.lnf.g"]), pv["enc.lnf.b"]);
}

}  // namespace pplus

#include "pplus/unet.hpp"

#include <cmath>
#include <stdexcept>

#include "pplus/ops.hpp"

namespace pplus {

UNetConfig UNetConfig::reference16() {
  UNetConfig c;
  c.preset = "reference-16";
  c.image_size = 32;
  c.levels = {{64, 16, 2, 3}, {32, 24, 2, 3}, {16, 32, 2, 3}};
  c.bottom_channels = 32;
  c.bottom_blocks = 2;
  return c;
}

UNetConfig UNetConfig::micro5() {
  UNetConfig c;
  c.preset = "micro-5";
  c.image_size = 16;
  c.levels = {{64, 12, 1, 1}, {32, 16, 1, 1}};
  c.bottom_channels = 24;
  c.bottom_blocks = 1;
  return c;
}

void UNetConfig::validate() const {
  if (levels.empty()) throw std::invalid_argument("unet config needs at least one cross-attention level");
  int64_t size = image_size;
  for (const auto& l : levels) {
    if (l.channels % gn_groups != 0) {
      throw std::invalid_argument("level channels must be divisible by gn_groups");
    }
    if (l.up_ca < 0 || l.up_ca > l.blocks + 1) {
      throw std::invalid_argument("up_ca must lie in [0, blocks+1]");
    }
    if (size % 2 != 0) throw std::invalid_argument("image size not divisible across levels");
    size /= 2;
  }
  if (bottom_channels % gn_groups != 0) {
    throw std::invalid_argument("bottom channels must be divisible by gn_groups");
  }
}

LayerRegistry UNetConfig::build_registry() const {
  std::vector<LayerId> v;
  for (const auto& l : levels) {
    for (int b = 0; b < l.blocks; ++b) v.push_back(LayerId{l.sd_res, LayerDir::Down, b});
  }
  // The bottleneck layer keeps the reference name "(8, 'down', 0)".
  v.push_back(LayerId{8, LayerDir::Down, 0});
  for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
    for (int b = 0; b < it->up_ca; ++b) v.push_back(LayerId{it->sd_res, LayerDir::Up, b});
  }
  return LayerRegistry(std::move(v));
}

UNet::UNet(UNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  registry_ = cfg_.build_registry();
}

namespace {

void add_resblock_params(ParamStore& s, RandomSource& rng, const std::string& prefix, int64_t cin,
                         int64_t cout, int64_t time_dim) {
  const double k1 = 1.0 / std::sqrt(static_cast<double>(cin * 9));
  const double k2 = 1.0 / std::sqrt(static_cast<double>(cout * 9));
  s.add_full(prefix + "gn1.g", {cin}, 1.0);
  s.add_zeros(prefix + "gn1.b", {cin});
  s.add_normal(prefix + "conv1.w", {cout, cin, 3, 3}, rng, k1);
  s.add_zeros(prefix + "conv1.b", {cout});
  s.add_normal(prefix + "temb.w", {time_dim, cout}, rng, 1.0 / std::sqrt(static_cast<double>(time_dim)));
  s.add_zeros(prefix + "temb.b", {cout});
  s.add_full(prefix + "gn2.g", {cout}, 1.0);
  s.add_zeros(prefix + "gn2.b", {cout});
  s.add_normal(prefix + "conv2.w", {cout, cout, 3, 3}, rng, 0.2 * k2);
  s.add_zeros(prefix + "conv2.b", {cout});
  if (cin != cout) {
    s.add_normal(prefix + "skip.w", {cout, cin, 1, 1}, rng, 1.0 / std::sqrt(static_cast<double>(cin)));
    s.add_zeros(prefix + "skip.b", {cout});
  }
}

void add_ca_params(ParamStore& s, RandomSource& rng, const std::string& prefix, int64_t c,
                   int64_t d_ctx, int64_t heads) {
  const int64_t dh = c / heads;
  (void)dh;
  const double kc = 1.0 / std::sqrt(static_cast<double>(c));
  const double kd = 1.0 / std::sqrt(static_cast<double>(d_ctx));
  s.add_full(prefix + "gn.g", {c}, 1.0);
  s.add_zeros(prefix + "gn.b", {c});
  for (int64_t h = 0; h < heads; ++h) {
    const std::string hp = prefix + "h" + std::to_string(h) + ".";
    s.add_normal(hp + "wq", {c, c / heads}, rng, kc);
    s.add_normal(hp + "wk", {d_ctx, c / heads}, rng, kd);
    s.add_normal(hp + "wv", {d_ctx, c / heads}, rng, kd);
  }
  s.add_normal(prefix + "wo", {c, c}, rng, 0.2 * kc);
  s.add_zeros(prefix + "bo", {c});
}

std::vector<double> fourier_features(int64_t t, int64_t dim) {
  std::vector<double> f(static_cast<size_t>(dim));
  const int64_t half = dim / 2;
  for (int64_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    f[static_cast<size_t>(2 * i)] = std::sin(static_cast<double>(t) * freq);
    f[static_cast<size_t>(2 * i + 1)] = std::cos(static_cast<double>(t) * freq);
  }
  return f;
}

}  // namespace

void UNet::register_params(ParamStore& s, RandomSource& rng) const {
  const int64_t c0 = cfg_.levels.front().channels;
  const int64_t cb = cfg_.bottom_channels;
  s.add_normal("unet.conv_in.w", {c0, cfg_.image_channels, 3, 3}, rng,
               1.0 / std::sqrt(static_cast<double>(cfg_.image_channels * 9)));
  s.add_zeros("unet.conv_in.b", {c0});
  s.add_normal("unet.temb.w1", {cfg_.fourier_dim, cfg_.time_dim}, rng,
               1.0 / std::sqrt(static_cast<double>(cfg_.fourier_dim)));
  s.add_zeros("unet.temb.b1", {cfg_.time_dim});
  s.add_normal("unet.temb.w2", {cfg_.time_dim, cfg_.time_dim}, rng,
               1.0 / std::sqrt(static_cast<double>(cfg_.time_dim)));
  s.add_zeros("unet.temb.b2", {cfg_.time_dim});

  int64_t cur = c0;
  for (size_t li = 0; li < cfg_.levels.size(); ++li) {
    const auto& l = cfg_.levels[li];
    for (int b = 0; b < l.blocks; ++b) {
      const std::string p = "unet.down" + std::to_string(li) + ".rb" + std::to_string(b) + ".";
      add_resblock_params(s, rng, p, cur, l.channels, cfg_.time_dim);
      cur = l.channels;
      add_ca_params(s, rng, "unet.down" + std::to_string(li) + ".ca" + std::to_string(b) + ".",
                    l.channels, cfg_.d_ctx, cfg_.heads);
    }
  }
  for (int b = 0; b < cfg_.bottom_blocks; ++b) {
    add_resblock_params(s, rng, "unet.bottom.rb" + std::to_string(b) + ".", cur, cb, cfg_.time_dim);
    cur = cb;
  }
  add_resblock_params(s, rng, "unet.mid.rb0.", cb, cb, cfg_.time_dim);
  add_ca_params(s, rng, "unet.mid.ca.", cb, cfg_.d_ctx, cfg_.heads);
  add_resblock_params(s, rng, "unet.mid.rb1.", cb, cb, cfg_.time_dim);

  // Up path skip channels mirror the push order of the down path.
  std::vector<int64_t> skips;
  skips.push_back(c0);
  int64_t ch = c0;
  for (const auto& l : cfg_.levels) {
    for (int b = 0; b < l.blocks; ++b) {
      skips.push_back(l.channels);
      ch = l.channels;
    }
    skips.push_back(ch);  // downsample
  }
  for (int b = 0; b < cfg_.bottom_blocks; ++b) skips.push_back(cb);

  cur = cb;
  for (int b = 0; b < cfg_.bottom_blocks + 1; ++b) {
    const int64_t sk = skips.back();
    skips.pop_back();
    add_resblock_params(s, rng, "unet.upbottom.rb" + std::to_string(b) + ".", cur + sk, cb, cfg_.time_dim);
    cur = cb;
  }
  for (size_t li = cfg_.levels.size(); li-- > 0;) {
    const auto& l = cfg_.levels[li];
    for (int b = 0; b < l.blocks + 1; ++b) {
      const int64_t sk = skips.back();
      skips.pop_back();
      const std::string p = "unet.up" + std::to_string(li) + ".rb" + std::to_string(b) + ".";
      add_resblock_params(s, rng, p, cur + sk, l.channels, cfg_.time_dim);
      cur = l.channels;
      if (b < l.up_ca) {
        add_ca_params(s, rng, "unet.up" + std::to_string(li) + ".ca" + std::to_string(b) + ".",
                      l.channels, cfg_.d_ctx, cfg_.heads);
      }
    }
  }
  s.add_full("unet.out.gn.g", {cur}, 1.0);
  s.add_zeros("unet.out.gn.b", {cur});
  s.add_zeros("unet.out.conv.w", {cfg_.image_channels, cur, 3, 3});
  s.add_zeros("unet.out.conv.b", {cfg_.image_channels});
}

Tensor UNet::resblock(ParamView& pv, const std::string& prefix, const Tensor& x, const Tensor& temb,
                      int64_t cin, int64_t cout) const {
  Tensor h = group_norm(x, cfg_.gn_groups);
  h = add_chw_bias(mul_chw_scale(h, pv[prefix + "gn1.g"]), pv[prefix + "gn1.b"]);
  h = silu(h);
  h = add_chw_bias(conv2d(h, pv[prefix + "conv1.w"], 1), pv[prefix + "conv1.b"]);
  Tensor tv = add_rowvec(matmul(temb, pv[prefix + "temb.w"]), pv[prefix + "temb.b"]);
  h = add_chw_bias(h, reshape(tv, {cout}));
  h = group_norm(h, cfg_.gn_groups);
  h = add_chw_bias(mul_chw_scale(h, pv[prefix + "gn2.g"]), pv[prefix + "gn2.b"]);
  h = silu(h);
  h = add_chw_bias(conv2d(h, pv[prefix + "conv2.w"], 1), pv[prefix + "conv2.b"]);
  Tensor skip = x;
  if (cin != cout) {
    skip = add_chw_bias(conv2d(x, pv[prefix + "skip.w"], 0), pv[prefix + "skip.b"]);
  }
  return add(h, skip);
}

Tensor UNet::cross_attn(ParamView& pv, const std::string& prefix, const Tensor& x, const LayerId& layer,
                        int64_t t, const LayerContexts& contexts, AttentionSink* sink) const {
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t pos = registry_.position(layer);
  const Tensor& ctx = contexts.ctx[static_cast<size_t>(pos)];
  const std::vector<uint8_t>& mask = contexts.mask[static_cast<size_t>(pos)];

  Tensor hn = group_norm(x, cfg_.gn_groups);
  hn = add_chw_bias(mul_chw_scale(hn, pv[prefix + "gn.g"]), pv[prefix + "gn.b"]);
  Tensor tokens = transpose2(reshape(hn, {c, h * w}));  // (hw, c)
  std::vector<Tensor> heads;
  for (int64_t hd = 0; hd < cfg_.heads; ++hd) {
    const std::string hp = prefix + "h" + std::to_string(hd) + ".";
    Tensor q = matmul(tokens, pv[hp + "wq"]);
    Tensor k = matmul(ctx, pv[hp + "wk"]);
    Tensor v = matmul(ctx, pv[hp + "wv"]);
    Tensor weights;
    Tensor o = attention(q, k, v, mask, &weights);
    if (sink != nullptr) sink->record(layer, static_cast<int>(hd), t, weights, mask);
    heads.push_back(o);
  }
  Tensor o = add_rowvec(matmul(concat(heads, 1), pv[prefix + "wo"]), pv[prefix + "bo"]);
  return add(x, reshape(transpose2(o), {c, h, w}));
}

Tensor UNet::forward(ParamView& pv, const Tensor& x, int64_t t, const LayerContexts& contexts,
                     AttentionSink* sink) const {
  if (x.rank() != 3 || x.dim(0) != cfg_.image_channels || x.dim(1) != cfg_.image_size ||
      x.dim(2) != cfg_.image_size) {
    throw std::invalid_argument("unet input shape " + shape_str(x.shape()) + " does not match config");
  }
  if (static_cast<int64_t>(contexts.ctx.size()) != registry_.size()) {
    throw std::invalid_argument("contexts cover " + std::to_string(contexts.ctx.size()) + " layers, registry has " +
                                std::to_string(registry_.size()));
  }

  Tensor temb = Tensor::constant({1, cfg_.fourier_dim}, fourier_features(t, cfg_.fourier_dim));
  temb = add_rowvec(matmul(temb, pv["unet.temb.w1"]), pv["unet.temb.b1"]);
  temb = silu(temb);
  temb = add_rowvec(matmul(temb, pv["unet.temb.w2"]), pv["unet.temb.b2"]);
  temb = silu(temb);

  Tensor h = add_chw_bias(conv2d(x, pv["unet.conv_in.w"], 1), pv["unet.conv_in.b"]);
  std::vector<Tensor> skips;
  skips.push_back(h);
  int64_t cur = cfg_.levels.front().channels;
  for (size_t li = 0; li < cfg_.levels.size(); ++li) {
    const auto& l = cfg_.levels[li];
    for (int b = 0; b < l.blocks; ++b) {
      h = resblock(pv, "unet.down" + std::to_string(li) + ".rb" + std::to_string(b) + ".", h, temb, cur,
                   l.channels);
      cur = l.channels;
      h = cross_attn(pv, "unet.down" + std::to_string(li) + ".ca" + std::to_string(b) + ".", h,
                     LayerId{l.sd_res, LayerDir::Down, b}, t, contexts, sink);
      skips.push_back(h);
    }
    h = avg_pool2(h);
    skips.push_back(h);
  }
  const int64_t cb = cfg_.bottom_channels;
  for (int b = 0; b < cfg_.bottom_blocks; ++b) {
    h = resblock(pv, "unet.bottom.rb" + std::to_string(b) + ".", h, temb, cur, cb);
    cur = cb;
    skips.push_back(h);
  }
  h = resblock(pv, "unet.mid.rb0.", h, temb, cb, cb);
  h = cross_attn(pv, "unet.mid.ca.", h, LayerId{8, LayerDir::Down, 0}, t, contexts, sink);
  h = resblock(pv, "unet.mid.rb1.", h, temb, cb, cb);

  for (int b = 0; b < cfg_.bottom_blocks + 1; ++b) {
    Tensor sk = skips.back();
    skips.pop_back();
    h = resblock(pv, "unet.upbottom.rb" + std::to_string(b) + ".", concat({h, sk}, 0), temb,
                 cur + sk.dim(0), cb);
    cur = cb;
  }
  h = upsample2(h);
  for (size_t li = cfg_.levels.size(); li-- > 0;) {
    const auto& l = cfg_.levels[li];
    for (int b = 0; b < l.blocks + 1; ++b) {
      Tensor sk = skips.back();
      skips.pop_back();
      h = resblock(pv, "unet.up" + std::to_string(li) + ".rb" + std::to_string(b) + ".",
                   concat({h, sk}, 0), temb, cur + sk.dim(0), l.channels);
      cur = l.channels;
      if (b < l.up_ca) {
        h = cross_attn(pv, "unet.up" + std::to_string(li) + ".ca" + std::to_string(b) + ".", h,
                       LayerId{l.sd_res, LayerDir::Up, b}, t, contexts, sink);
      }
    }
    if (li != 0) h = upsample2(h);
  }
  h = group_norm(h, cfg_.gn_groups);
  h = add_chw_bias(mul_chw_scale(h, pv["unet.out.gn.g"]), pv["unet.out.gn.b"]);
  h = silu(h);
  return add_chw_bias(conv2d(h, pv["unet.out.conv.w"], 1), pv["unet.out.conv.b"]);
}

}  // namespace pplus

#include "pplus/model.hpp"

#include <cstring>
#include <stdexcept>
#include <unordered_map>

#include "pplus/ops.hpp"

namespace pplus {

Model Model::build(Vocabulary vocab, ModelConfig cfg, uint64_t seed) {
  if (cfg.enc.d != cfg.unet.d_ctx) {
    throw std::invalid_argument("encoder width must equal the unet context width");
  }
  Model m{std::move(vocab), cfg, NoiseSchedule::linear(cfg.T, cfg.beta_lo, cfg.beta_hi),
          TextEncoder(cfg.enc), UNet(cfg.unet), LayerRegistry(), ParamStore(), seed};
  m.registry = m.unet.registry();
  RandomSource rng(mix_seed(seed, 0xbead));
  m.params.add_normal("lookup.table", {m.vocab.natural_size(), cfg.enc.d}, rng, 0.02);
  m.encoder.register_params(m.params, rng);
  m.unet.register_params(m.params, rng);
  return m;
}

PromptTemplate Model::tokenize(const std::string& text) const {
  return vocab.tokenize(text, cfg.enc.seq_len);
}

ExtendedPrompt Model::broadcast_prompt(const std::string& text) const {
  return ExtendedPrompt::broadcast(registry, spec_of(text));
}

Tensor Model::encode(ParamView& pv, const PromptTemplate& tmpl, const Tensor* override_embedding) const {
  if (tmpl.has_placeholder() != (override_embedding != nullptr && override_embedding->defined())) {
    throw std::invalid_argument(tmpl.has_placeholder()
                                    ? "template has a placeholder but no override was provided"
                                    : "override provided for a template without a placeholder");
  }
  Tensor table = pv["lookup.table"];
  Tensor rows;
  if (tmpl.has_placeholder()) {
    const int p = tmpl.placeholder_pos;
    if (override_embedding->numel() != cfg.enc.d) {
      throw std::invalid_argument("override embedding must have length " + std::to_string(cfg.enc.d));
    }
    std::vector<int32_t> before(tmpl.ids.begin(), tmpl.ids.begin() + p);
    std::vector<int32_t> after(tmpl.ids.begin() + p + 1, tmpl.ids.end());
    Tensor ov = reshape(*override_embedding, {1, cfg.enc.d});
    rows = concat({gather_rows(table, before), ov, gather_rows(table, after)}, 0);
  } else {
    rows = gather_rows(table, tmpl.ids);
  }
  return encoder.forward(pv, rows, tmpl.mask);
}

namespace {

// Two specs share an encoder pass only when they are the same template and
// literally the same override node (or bit-identical constant). Distinct
// graph leaves never merge, so per-layer gradients stay separate.
std::string spec_key(const LayerSpec& s) {
  std::string key;
  key.reserve(s.tmpl.ids.size() * 4 + 32);
  key.append(reinterpret_cast<const char*>(s.tmpl.ids.data()), s.tmpl.ids.size() * sizeof(int32_t));
  if (s.has_override()) {
    if (s.override.node() >= 0) {
      key += "#n";
      const int node = s.override.node();
      key.append(reinterpret_cast<const char*>(&node), sizeof(node));
    } else {
      key += "#c";
      key.append(reinterpret_cast<const char*>(s.override.ptr()), s.override.data().size() * sizeof(double));
    }
  }
  return key;
}

}  // namespace

LayerContexts Model::encode_extended(ParamView& pv, const ExtendedPrompt& p) const {
  if (p.registry_fp != registry.fingerprint() || p.size() != registry.size()) {
    throw std::invalid_argument("extended prompt was built on a different registry");
  }
  LayerContexts out;
  out.ctx.resize(p.specs.size());
  out.mask.resize(p.specs.size());
  std::unordered_map<std::string, size_t> memo;
  for (size_t i = 0; i < p.specs.size(); ++i) {
    const LayerSpec& s = p.specs[i];
    const std::string key = spec_key(s);
    auto it = memo.find(key);
    if (it != memo.end()) {
      out.ctx[i] = out.ctx[it->second];
      out.mask[i] = out.mask[it->second];
      continue;
    }
    const Tensor* ov = s.has_override() ? &s.override : nullptr;
    out.ctx[i] = encode(pv, s.tmpl, ov);
    std::vector<uint8_t> mask = s.tmpl.mask;
    // PAD keys are attend-masked out; BOS/EOS stay visible.
    out.mask[i] = std::move(mask);
    memo.emplace(key, i);
  }
  return out;
}

Tensor Model::route(ParamView& pv, const ExtendedPrompt& p, const LayerId& layer) const {
  if (p.registry_fp != registry.fingerprint() || p.size() != registry.size()) {
    throw std::invalid_argument("extended prompt was built on a different registry");
  }
  const int64_t pos = registry.position(layer);
  const LayerSpec& s = p.specs[static_cast<size_t>(pos)];
  const Tensor* ov = s.has_override() ? &s.override : nullptr;
  return encode(pv, s.tmpl, ov);
}

Tensor Model::predict_noise(ParamView& pv, const Tensor& x, int64_t t, const ExtendedPrompt& p,
                            AttentionSink* sink) const {
  LayerContexts ctx = encode_extended(pv, p);
  return unet.forward(pv, x, t, ctx, sink);
}

Tensor Model::predict_noise_ctx(ParamView& pv, const Tensor& x, int64_t t, const LayerContexts& ctx,
                                AttentionSink* sink) const {
  return unet.forward(pv, x, t, ctx, sink);
}

Tensor Model::cfg_predict(ParamView& pv, const Tensor& x, int64_t t, const ExtendedPrompt& p, double w,
                          AttentionSink* sink) const {
  if (w < 0) throw std::invalid_argument("guidance scale must be nonnegative");
  Tensor cond = predict_noise(pv, x, t, p, sink);
  Tensor uncond = predict_noise(pv, x, t, broadcast_prompt(""));
  return add(uncond, scale(sub(cond, uncond), w));
}

}  // namespace pplus

#pragma once

#include <cstdint>
#include <vector>

#include "pplus/params.hpp"
#include "pplus/tensor.hpp"

namespace pplus {

struct EncoderConfig {
  int64_t seq_len = 12;
  int64_t d = 48;      // token embedding width; the context width equals it
  int64_t heads = 2;
  int64_t blocks = 2;
  int64_t mlp_hidden = 96;
};

// Two-block transformer over looked-up token rows, trained during
// pretraining and frozen afterwards. PAD positions are masked out of
// self-attention; BOS/EOS stay visible.
class TextEncoder {
 public:
  explicit TextEncoder(EncoderConfig cfg) : cfg_(cfg) {}

  void register_params(ParamStore& store, RandomSource& rng) const;
  Tensor forward(ParamView& pv, const Tensor& rows, const std::vector<uint8_t>& mask) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
};

}  // namespace pplus

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pplus/layers.hpp"
#include "pplus/params.hpp"
#include "pplus/tensor.hpp"

namespace pplus {

// Analysis hook. The attention op saves its normalized weights during the
// forward pass; the sink receives exactly those tensors.
struct AttentionSink {
  virtual ~AttentionSink() = default;
  virtual void record(const LayerId& layer, int head, int64_t timestep, const Tensor& weights,
                      const std::vector<uint8_t>& key_mask) = 0;
};

// One cross-attention level of the contracting/expansive paths. `sd_res` is
// the reference backbone's resolution name; the toy model runs each level at
// image_size >> level, i.e. name 64 -> 32 px, 32 -> 16 px, and so on.
struct LevelConfig {
  int64_t sd_res = 0;
  int64_t channels = 0;
  int blocks = 0;  // cross-attn blocks on the down path; up path has blocks+1
  int up_ca = 0;   // how many up-path blocks carry cross-attention
};

struct UNetConfig {
  std::string preset;
  int64_t image_size = 32;
  int64_t image_channels = 3;
  std::vector<LevelConfig> levels;  // outermost first
  int64_t bottom_channels = 32;     // innermost level, no cross-attention
  int bottom_blocks = 2;
  int64_t d_ctx = 48;
  int64_t heads = 2;
  int64_t time_dim = 64;
  int64_t fourier_dim = 32;
  int64_t gn_groups = 4;

  // 16 cross-attention layers arranged like the reference backbone.
  static UNetConfig reference16();
  // 5-layer configuration for fast tests.
  static UNetConfig micro5();

  LayerRegistry build_registry() const;
  void validate() const;
};

struct LayerContexts {
  std::vector<Tensor> ctx;                 // (seq, d_ctx) per registry entry
  std::vector<std::vector<uint8_t>> mask;  // attendable keys per entry
};

class UNet {
 public:
  explicit UNet(UNetConfig cfg);

  void register_params(ParamStore& store, RandomSource& rng) const;
  // x (image_channels, S, S) -> predicted noise of the same shape.
  Tensor forward(ParamView& pv, const Tensor& x, int64_t t, const LayerContexts& contexts,
                 AttentionSink* sink = nullptr) const;

  const UNetConfig& config() const { return cfg_; }
  const LayerRegistry& registry() const { return registry_; }

 private:
  Tensor resblock(ParamView& pv, const std::string& prefix, const Tensor& x, const Tensor& temb,
                  int64_t cin, int64_t cout) const;
  Tensor cross_attn(ParamView& pv, const std::string& prefix, const Tensor& x, const LayerId& layer,
                    int64_t t, const LayerContexts& contexts, AttentionSink* sink) const;

  UNetConfig cfg_;
  LayerRegistry registry_;
};

}  // namespace pplus

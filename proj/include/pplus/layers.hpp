#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pplus {

enum class LayerDir { Down, Mid, Up };

// Canonical identity of a cross-attention layer. Resolutions use the
// reference backbone's names (64/32/16/8) even though the toy model runs at
// half those spatial sizes; see UNetConfig for the size map.
struct LayerId {
  int64_t resolution = 0;
  LayerDir dir = LayerDir::Down;
  int64_t index = 0;

  std::string str() const;  // "(64, 'down', 0)"
  static LayerId parse(const std::string& s);

  bool operator==(const LayerId&) const = default;
  // U-net traversal order: down path outer->inner, mid, up path inner->outer.
  bool operator<(const LayerId& o) const;
};

class LayerRegistry {
 public:
  LayerRegistry() = default;
  explicit LayerRegistry(std::vector<LayerId> layers);

  static LayerRegistry reference16();

  int64_t size() const { return static_cast<int64_t>(layers_.size()); }
  const LayerId& at(int64_t i) const { return layers_[static_cast<size_t>(i)]; }
  const std::vector<LayerId>& layers() const { return layers_; }
  // 0-based position; throws for an unknown layer.
  int64_t position(const LayerId& id) const;
  bool contains(const LayerId& id) const;
  bool operator==(const LayerRegistry& o) const { return layers_ == o.layers_; }
  std::string fingerprint() const;  // layer names joined with "; "

 private:
  std::vector<LayerId> layers_;
};

struct LayerSubset {
  std::vector<LayerId> layers;  // in registry order

  bool empty() const { return layers.empty(); }
  size_t size() const { return layers.size(); }
  bool contains(const LayerId& id) const;
  // "Empty set", a single name, or "first - last" for a contiguous range.
  std::string range_str(const LayerRegistry& reg) const;
};

// The eight growing subsets used by the attribute sweep, defined only for
// the 16-layer reference registry.
std::vector<LayerSubset> subset_sequence(const LayerRegistry& reg);

// Parses "(16, 'down', 1) - (16, 'up', 0)" (inclusive range) or a
// comma-separated list of layer names that must form a contiguous run in
// registry order. Returns 1-based inclusive positions (lo, hi).
std::pair<int64_t, int64_t> parse_layer_range(const LayerRegistry& reg, const std::string& text);

}  // namespace pplus

#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pplus/graph.hpp"
#include "pplus/rng.hpp"
#include "pplus/tensor.hpp"

namespace pplus {

struct Param {
  std::string name;
  Shape shape;
  std::shared_ptr<std::vector<double>> value;

  int64_t numel() const { return shape_numel(shape); }
};

// Named parameter array. Declaration order is the checkpoint block order.
class ParamStore {
 public:
  Param& add_zeros(const std::string& name, Shape shape);
  Param& add_full(const std::string& name, Shape shape, double v);
  Param& add_normal(const std::string& name, Shape shape, RandomSource& rng, double stddev);

  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  size_t size() const { return params_.size(); }
  Param& param(size_t i) { return params_[i]; }
  const Param& param(size_t i) const { return params_[i]; }

  int64_t total_elements() const;
  // FNV-1a over the raw f64 bytes of every parameter in declaration order.
  uint64_t checksum() const;

 private:
  Param& emplace(const std::string& name, Shape shape, std::vector<double> v);
  std::vector<Param> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Per-forward-pass materialization of parameters as graph leaves (training)
// or plain constants (inference). Caching guarantees one leaf per parameter
// per graph so gradients from multiple uses accumulate on a single node.
class ParamView {
 public:
  ParamView(ParamStore& store, Graph* g, bool trainable)
      : store_(&store), g_(g), trainable_(trainable) {}

  Tensor operator[](const std::string& name);

  // (param, node) for every parameter materialized as a requires-grad leaf.
  std::vector<std::pair<Param*, int>> leaves() const;

 private:
  ParamStore* store_;
  Graph* g_;
  bool trainable_;
  std::unordered_map<Param*, Tensor> cache_;
};

}  // namespace pplus

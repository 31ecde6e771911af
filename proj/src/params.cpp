#include "pplus/params.hpp"

#include <cstring>
#include <stdexcept>

namespace pplus {

Param& ParamStore::emplace(const std::string& name, Shape shape, std::vector<double> v) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  Param p;
  p.name = name;
  p.shape = std::move(shape);
  p.value = std::make_shared<std::vector<double>>(std::move(v));
  if (static_cast<int64_t>(p.value->size()) != p.numel()) {
    throw std::invalid_argument("parameter '" + name + "' size mismatch");
  }
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::add_zeros(const std::string& name, Shape shape) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), 0.0);
  return emplace(name, std::move(shape), std::move(v));
}

Param& ParamStore::add_full(const std::string& name, Shape shape, double val) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), val);
  return emplace(name, std::move(shape), std::move(v));
}

Param& ParamStore::add_normal(const std::string& name, Shape shape, RandomSource& rng, double stddev) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = stddev * rng.normal();
  return emplace(name, std::move(shape), std::move(v));
}

Param& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return params_[it->second];
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

uint64_t ParamStore::checksum() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params_) {
    mix(p.name.data(), p.name.size());
    mix(p.value->data(), p.value->size() * sizeof(double));
  }
  return h;
}

Tensor ParamView::operator[](const std::string& name) {
  Param& p = store_->at(name);
  auto it = cache_.find(&p);
  if (it != cache_.end()) return it->second;
  Tensor t;
  if (g_ != nullptr && trainable_) {
    t = g_->leaf(p.shape, p.value, /*requires_grad=*/true);
  } else {
    t = Tensor::constant_shared(p.shape, p.value);
  }
  cache_.emplace(&p, t);
  return t;
}

std::vector<std::pair<Param*, int>> ParamView::leaves() const {
  std::vector<std::pair<Param*, int>> out;
  for (const auto& [p, t] : cache_) {
    if (t.node() >= 0) out.emplace_back(p, t.node());
  }
  return out;
}

}  // namespace pplus

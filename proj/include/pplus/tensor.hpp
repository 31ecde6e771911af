#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace pplus {

class Graph;

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool all_finite(const std::vector<double>& v);

// Dense row-major f64 tensor. Values are immutable once created; an op
// always allocates a fresh buffer for its output. A tensor is attached to
// a Graph node iff it lies on a gradient path.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor constant_shared(Shape shape, std::shared_ptr<std::vector<double>> values);
  static Tensor full(Shape shape, double value);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int64_t numel() const { return shape_numel(shape_); }
  int64_t dim(size_t i) const { return shape_[i]; }
  size_t rank() const { return shape_.size(); }

  const std::vector<double>& data() const { return *data_; }
  const double* ptr() const { return data_->data(); }
  const std::shared_ptr<std::vector<double>>& storage() const { return data_; }

  double value() const;  // requires numel() == 1
  double at(int64_t flat) const { return (*data_)[static_cast<size_t>(flat)]; }

  bool requires_grad() const { return requires_grad_; }
  int node() const { return node_; }
  Graph* graph() const { return graph_; }

  bool same_bits(const Tensor& other) const;

 private:
  friend class Graph;
  friend Tensor make_op_output(Shape, std::vector<double>, Graph*, int);

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Graph* graph_ = nullptr;
  int node_ = -1;
  bool requires_grad_ = false;
};

}  // namespace pplus

#include "pplus/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "pplus/graph.hpp"

namespace pplus {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

static void validate_shape(const Shape& shape, size_t count) {
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor extent must be positive, got shape " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<int64_t>(count)) {
    throw std::invalid_argument("element count " + std::to_string(count) +
                                " does not match shape " + shape_str(shape));
  }
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return constant_shared(std::move(shape), std::make_shared<std::vector<double>>(std::move(values)));
}

Tensor Tensor::constant_shared(Shape shape, std::shared_ptr<std::vector<double>> values) {
  validate_shape(shape, values->size());
  if (!all_finite(*values)) throw std::invalid_argument("non-finite values in tensor of shape " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), value);
  return constant(std::move(shape), std::move(v));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::scalar(double value) { return constant(Shape{1}, std::vector<double>{value}); }

double Tensor::value() const {
  if (numel() != 1) throw std::invalid_argument("value() requires a scalar, shape is " + shape_str(shape_));
  return (*data_)[0];
}

bool Tensor::same_bits(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(double)) == 0;
}

}  // namespace pplus

#include "pplus/graph.hpp"

#include <stdexcept>

namespace pplus {

void GradSink::accumulate(int node, const double* v, int64_t n) {
  if (node < 0) return;
  auto& buf = bufs_[static_cast<size_t>(node)];
  if (buf.empty()) buf.assign(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) buf[static_cast<size_t>(i)] += v[i];
}

void GradSink::accumulate_scaled(int node, const double* v, int64_t n, double scale) {
  if (node < 0) return;
  auto& buf = bufs_[static_cast<size_t>(node)];
  if (buf.empty()) buf.assign(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) buf[static_cast<size_t>(i)] += scale * v[i];
}

const std::vector<double>* GradSink::get(int node) const {
  if (node < 0) return nullptr;
  const auto& buf = bufs_[static_cast<size_t>(node)];
  return buf.empty() ? nullptr : &buf;
}

int Graph::add_node(const Shape& shape) {
  node_shapes_.push_back(shape);
  return static_cast<int>(node_shapes_.size()) - 1;
}

void Graph::add_record(const char* op, std::vector<int> inputs, int output, BackwardFn fn) {
  records_.push_back(OpRecord{op, std::move(inputs), output, std::move(fn)});
}

Tensor Graph::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  return leaf(std::move(shape), std::make_shared<std::vector<double>>(std::move(values)), requires_grad);
}

Tensor Graph::leaf(Shape shape, std::shared_ptr<std::vector<double>> values, bool requires_grad) {
  Tensor t = Tensor::constant_shared(std::move(shape), std::move(values));
  if (!requires_grad) return t;  // stays off the tape; never accumulates a gradient
  t.graph_ = this;
  t.node_ = add_node(t.shape());
  t.requires_grad_ = true;
  leaves_.push_back(LeafInfo{t.node_, t.shape(), true});
  return t;
}

GradientMap Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, shape is " + shape_str(loss.shape()));
  }
  if (loss.graph() != this || loss.node() < 0) {
    throw std::invalid_argument("loss tensor is not on this graph");
  }
  GradSink sink(node_shapes_.size());
  const double one = 1.0;
  sink.accumulate(loss.node(), &one, 1);

  backward_visits_ = 0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    ++backward_visits_;
    const std::vector<double>* gout = sink.get(it->output);
    if (gout == nullptr) continue;  // output not on the path from loss
    it->backward(*gout, sink);
  }

  GradientMap grads;
  for (const auto& lf : leaves_) {
    if (!lf.requires_grad) continue;
    const std::vector<double>* g = sink.get(lf.node);
    if (g != nullptr) {
      grads.emplace(lf.node, Tensor::constant(lf.shape, *g));
    } else {
      grads.emplace(lf.node, Tensor::zeros(lf.shape));
    }
  }
  return grads;
}

Tensor make_op_output(Shape shape, std::vector<double> values, Graph* g, int node) {
  Tensor t = Tensor::constant(std::move(shape), std::move(values));
  if (g != nullptr && node >= 0) {
    t.graph_ = g;
    t.node_ = node;
    t.requires_grad_ = true;
  }
  return t;
}

}  // namespace pplus

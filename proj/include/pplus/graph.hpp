#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pplus/tensor.hpp"

namespace pplus {

// Gradient buffers indexed by node id, filled during backward.
class GradSink {
 public:
  explicit GradSink(size_t nodes) : bufs_(nodes) {}
  // Adds v (n doubles) into the buffer of `node`; no-op for node < 0.
  void accumulate(int node, const double* v, int64_t n);
  void accumulate_scaled(int node, const double* v, int64_t n, double scale);
  const std::vector<double>* get(int node) const;
  std::vector<double>& buffer(int node) { return bufs_[static_cast<size_t>(node)]; }

 private:
  std::vector<std::vector<double>> bufs_;
};

using BackwardFn = std::function<void(const std::vector<double>& grad_out, GradSink& sink)>;

struct OpRecord {
  const char* op;
  std::vector<int> inputs;  // node ids; -1 marks a constant input
  int output;
  BackwardFn backward;
};

using GradientMap = std::unordered_map<int, Tensor>;

// Append-only tape. Records are pushed in execution order, so inputs always
// precede outputs; backward walks the tape once, in reverse.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = true);
  Tensor leaf(Shape shape, std::shared_ptr<std::vector<double>> values,
              bool requires_grad = true);

  // Gradient of a scalar loss for every requires-grad leaf, keyed by node id.
  GradientMap backward(const Tensor& loss);

  size_t num_nodes() const { return node_shapes_.size(); }
  size_t num_records() const { return records_.size(); }
  const OpRecord& record(size_t i) const { return records_[i]; }
  size_t backward_visits() const { return backward_visits_; }

  // Internal: used by ops to register their output.
  int add_node(const Shape& shape);
  void add_record(const char* op, std::vector<int> inputs, int output, BackwardFn fn);
  int leaf_count() const { return static_cast<int>(leaves_.size()); }

 private:
  struct LeafInfo {
    int node;
    Shape shape;
    bool requires_grad;
  };
  std::vector<Shape> node_shapes_;
  std::vector<OpRecord> records_;
  std::vector<LeafInfo> leaves_;
  size_t backward_visits_ = 0;
};

// Internal helper shared by the op implementations.
Tensor make_op_output(Shape shape, std::vector<double> values, Graph* g, int node);

}  // namespace pplus

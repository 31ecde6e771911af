#include "pplus/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace pplus {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// C (m x n) = op(A) op(B), row-major buffers, optional accumulate.
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k,
          const double* a, const double* b, double* c, bool acc = false) {
  MutMap cm(c, m, n);
  auto run = [&](const auto& am, const auto& bm) {
    if (acc)
      cm.noalias() += am * bm;
    else
      cm.noalias() = am * bm;
  };
  if (!ta && !tb)
    run(ConstMap(a, m, k), ConstMap(b, k, n));
  else if (ta && !tb)
    run(ConstMap(a, k, m).transpose(), ConstMap(b, k, n));
  else if (!ta && tb)
    run(ConstMap(a, m, k), ConstMap(b, n, k).transpose());
  else
    run(ConstMap(a, k, m).transpose(), ConstMap(b, n, k).transpose());
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, size_t rank) {
  if (a.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_str(a.shape()));
  }
}

void require_finite(const char* op, const Tensor& a) {
  if (!all_finite(a.data())) {
    throw std::invalid_argument(std::string(op) + ": non-finite input of shape " + shape_str(a.shape()));
  }
}

struct OpBuild {
  Graph* g = nullptr;
  int node = -1;
  explicit operator bool() const { return g != nullptr; }
};

OpBuild prep(const char* op, std::initializer_list<const Tensor*> inputs, const Shape& out_shape) {
  Graph* g = nullptr;
  for (const Tensor* t : inputs) {
    if (t->node() < 0) continue;
    if (g == nullptr) {
      g = t->graph();
    } else if (g != t->graph()) {
      throw std::invalid_argument(std::string(op) + ": inputs belong to different graphs");
    }
  }
  OpBuild ob;
  if (g != nullptr) {
    ob.g = g;
    ob.node = g->add_node(out_shape);
  }
  return ob;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void im2col(const double* x, int64_t ci, int64_t h, int64_t w, int64_t kk, int64_t pad,
            int64_t oh, int64_t ow, double* cols) {
  // cols is (ci*kk*kk) x (oh*ow)
  const int64_t ohw = oh * ow;
  for (int64_t c = 0; c < ci; ++c) {
    for (int64_t ky = 0; ky < kk; ++ky) {
      for (int64_t kx = 0; kx < kk; ++kx) {
        double* row = cols + ((c * kk + ky) * kk + kx) * ohw;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy + ky - pad;
          if (iy < 0 || iy >= h) {
            std::memset(row + oy * ow, 0, static_cast<size_t>(ow) * sizeof(double));
            continue;
          }
          const double* src = x + (c * h + iy) * w;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox + kx - pad;
            row[oy * ow + ox] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int64_t ci, int64_t h, int64_t w, int64_t kk, int64_t pad,
                int64_t oh, int64_t ow, double* dx) {
  const int64_t ohw = oh * ow;
  for (int64_t c = 0; c < ci; ++c) {
    for (int64_t ky = 0; ky < kk; ++ky) {
      for (int64_t kx = 0; kx < kk; ++kx) {
        const double* row = cols + ((c * kk + ky) * kk + kx) * ohw;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy + ky - pad;
          if (iy < 0 || iy >= h) continue;
          double* dst = dx + (c * h + iy) * w;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox + kx - pad;
            if (ix >= 0 && ix < w) dst[ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a.at(i) + b.at(i);
  OpBuild ob = prep("add", {&a, &b}, a.shape());
  if (ob) {
    const int na = a.node(), nb = b.node();
    ob.g->add_record("add", {na, nb}, ob.node, [na, nb, n](const std::vector<double>& g, GradSink& s) {
      s.accumulate(na, g.data(), n);
      s.accumulate(nb, g.data(), n);
    });
  }
  return make_op_output(a.shape(), std::move(out), ob.g, ob.node);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a.at(i) - b.at(i);
  OpBuild ob = prep("sub", {&a, &b}, a.shape());
  if (ob) {
    const int na = a.node(), nb = b.node();
    ob.g->add_record("sub", {na, nb}, ob.node, [na, nb, n](const std::vector<double>& g, GradSink& s) {
      s.accumulate(na, g.data(), n);
      s.accumulate_scaled(nb, g.data(), n, -1.0);
    });
  }
  return make_op_output(a.shape(), std::move(out), ob.g, ob.node);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a.at(i) * b.at(i);
  OpBuild ob = prep("mul", {&a, &b}, a.shape());
  if (ob) {
    const int na = a.node(), nb = b.node();
    Tensor sa = a, sb = b;
    ob.g->add_record("mul", {na, nb}, ob.node, [na, nb, n, sa, sb](const std::vector<double>& g, GradSink& s) {
      if (na >= 0) {
        std::vector<double> da(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) da[i] = g[i] * sb.at(i);
        s.accumulate(na, da.data(), n);
      }
      if (nb >= 0) {
        std::vector<double> db(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) db[i] = g[i] * sa.at(i);
        s.accumulate(nb, db.data(), n);
      }
    });
  }
  return make_op_output(a.shape(), std::move(out), ob.g, ob.node);
}

Tensor scale(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw std::invalid_argument("scale: non-finite factor");
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a.at(i) * c;
  OpBuild ob = prep("scale", {&a}, a.shape());
  if (ob) {
    const int na = a.node();
    ob.g->add_record("scale", {na}, ob.node, [na, n, c](const std::vector<double>& g, GradSink& s) {
      s.accumulate_scaled(na, g.data(), n, c);
    });
  }
  return make_op_output(a.shape(), std::move(out), ob.g, ob.node);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out = a.data();
  OpBuild ob = prep("reshape", {&a}, shape);
  if (ob) {
    const int na = a.node();
    const int64_t n = a.numel();
    ob.g->add_record("reshape", {na}, ob.node, [na, n](const std::vector<double>& g, GradSink& s) {
      s.accumulate(na, g.data(), n);
    });
  }
  return make_op_output(std::move(shape), std::move(out), ob.g, ob.node);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const size_t rank = parts[0].rank();
  if (axis < 0 || static_cast<size_t>(axis) >= rank) {
    throw std::invalid_argument("concat: axis " + std::to_string(axis) + " out of range for shape " +
                                shape_str(parts[0].shape()));
  }
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
    for (size_t i = 0; i < rank; ++i) {
      if (i != static_cast<size_t>(axis) && p.shape()[i] != out_shape[i]) {
        throw std::invalid_argument("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                    shape_str(out_shape) + " off axis " + std::to_string(axis));
      }
    }
    axis_total += p.shape()[static_cast<size_t>(axis)];
  }
  out_shape[static_cast<size_t>(axis)] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < rank; ++i) inner *= out_shape[i];

  std::vector<double> out(static_cast<size_t>(outer * axis_total * inner));
  std::vector<int64_t> axis_dims;
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const Tensor& p : parts) {
    const int64_t m = p.shape()[static_cast<size_t>(axis)];
    axis_dims.push_back(m);
    offsets.push_back(off);
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + (o * axis_total + off) * inner, p.ptr() + o * m * inner,
                  static_cast<size_t>(m * inner) * sizeof(double));
    }
    off += m;
  }

  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  Graph* g = nullptr;
  for (const Tensor* t : ptrs) {
    if (t->node() >= 0) {
      if (g != nullptr && g != t->graph()) throw std::invalid_argument("concat: inputs belong to different graphs");
      g = t->graph();
    }
  }
  if (g == nullptr) return Tensor::constant(std::move(out_shape), std::move(out));
  const int node = g->add_node(out_shape);
  std::vector<int> in_nodes;
  for (const Tensor& p : parts) in_nodes.push_back(p.node());
  g->add_record("concat", in_nodes, node,
                [in_nodes, axis_dims, offsets, outer, inner, axis_total](const std::vector<double>& gr, GradSink& s) {
                  for (size_t pi = 0; pi < in_nodes.size(); ++pi) {
                    if (in_nodes[pi] < 0) continue;
                    const int64_t m = axis_dims[pi];
                    std::vector<double> part(static_cast<size_t>(outer * m * inner));
                    for (int64_t o = 0; o < outer; ++o) {
                      std::memcpy(part.data() + o * m * inner,
                                  gr.data() + (o * axis_total + offsets[pi]) * inner,
                                  static_cast<size_t>(m * inner) * sizeof(double));
                    }
                    s.accumulate(in_nodes[pi], part.data(), outer * m * inner);
                  }
                });
  return make_op_output(std::move(out_shape), std::move(out), g, node);
}

Tensor transpose2(const Tensor& a) {
  require_rank("transpose2", a, 2);
  const int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a.at(i * n + j);
  Shape shape{n, m};
  OpBuild ob = prep("transpose2", {&a}, shape);
  if (ob) {
    const int na = a.node();
    ob.g->add_record("transpose2", {na}, ob.node, [na, m, n](const std::vector<double>& g, GradSink& s) {
      std::vector<double> da(static_cast<size_t>(m * n));
      for (int64_t j = 0; j < n; ++j)
        for (int64_t i = 0; i < m; ++i) da[i * n + j] = g[j * m + i];
      s.accumulate(na, da.data(), m * n);
    });
  }
  return make_op_output(std::move(shape), std::move(out), ob.g, ob.node);
}

Tensor silu(const Tensor& a) {
  const int64_t n = a.numel();
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a.at(i) * sigmoid(a.at(i));
  OpBuild ob = prep("silu", {&a}, a.shape());
  if (ob) {
    const int na = a.node();
    Tensor sa = a;
    ob.g->add_record("silu", {na}, ob.node, [na, n, sa](const std::vector<double>& g, GradSink& s) {
      std::vector<double> da(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) {
        const double sg = sigmoid(sa.at(i));
        da[i] = g[i] * sg * (1.0 + sa.at(i) * (1.0 - sg));
      }
      s.accumulate(na, da.data(), n);
    });
  }
  return make_op_output(a.shape(), std::move(out), ob.g, ob.node);
}

Tensor sum_all(const Tensor& a) {
  const int64_t n = a.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += a.at(i);
  Shape shape{1};
  OpBuild ob = prep("sum_all", {&a}, shape);
  if (ob) {
    const int na = a.node();
    ob.g->add_record("sum_all", {na}, ob.node, [na, n](const std::vector<double>& g, GradSink& s) {
      std::vector<double> da(static_cast<size_t>(n), g[0]);
      s.accumulate(na, da.data(), n);
    });
  }
  return make_op_output(std::move(shape), std::vector<double>{acc}, ob.g, ob.node);
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  require_rank("add_rowvec", x, 2);
  require_rank("add_rowvec", b, 1);
  const int64_t n = x.dim(0), m = x.dim(1);
  if (b.dim(0) != m) {
    throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(n * m));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out[i * m + j] = x.at(i * m + j) + b.at(j);
  OpBuild ob = prep("add_rowvec", {&x, &b}, x.shape());
  if (ob) {
    const int nx = x.node(), nb = b.node();
    ob.g->add_record("add_rowvec", {nx, nb}, ob.node, [nx, nb, n, m](const std::vector<double>& g, GradSink& s) {
      s.accumulate(nx, g.data(), n * m);
      if (nb >= 0) {
        std::vector<double> db(static_cast<size_t>(m), 0.0);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < m; ++j) db[j] += g[i * m + j];
        s.accumulate(nb, db.data(), m);
      }
    });
  }
  return make_op_output(x.shape(), std::move(out), ob.g, ob.node);
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  require_rank("mul_rowvec", x, 2);
  require_rank("mul_rowvec", v, 1);
  const int64_t n = x.dim(0), m = x.dim(1);
  if (v.dim(0) != m) {
    throw std::invalid_argument("mul_rowvec: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(v.shape()));
  }
  std::vector<double> out(static_cast<size_t>(n * m));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out[i * m + j] = x.at(i * m + j) * v.at(j);
  OpBuild ob = prep("mul_rowvec", {&x, &v}, x.shape());
  if (ob) {
    const int nx = x.node(), nv = v.node();
    Tensor sx = x, sv = v;
    ob.g->add_record("mul_rowvec", {nx, nv}, ob.node, [nx, nv, n, m, sx, sv](const std::vector<double>& g, GradSink& s) {
      if (nx >= 0) {
        std::vector<double> dx(static_cast<size_t>(n * m));
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < m; ++j) dx[i * m + j] = g[i * m + j] * sv.at(j);
        s.accumulate(nx, dx.data(), n * m);
      }
      if (nv >= 0) {
        std::vector<double> dv(static_cast<size_t>(m), 0.0);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < m; ++j) dv[j] += g[i * m + j] * sx.at(i * m + j);
        s.accumulate(nv, dv.data(), m);
      }
    });
  }
  return make_op_output(x.shape(), std::move(out), ob.g, ob.node);
}

Tensor add_chw_bias(const Tensor& x, const Tensor& b) {
  require_rank("add_chw_bias", x, 3);
  require_rank("add_chw_bias", b, 1);
  const int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (b.dim(0) != c) {
    throw std::invalid_argument("add_chw_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(c * hw));
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < hw; ++i) out[ci * hw + i] = x.at(ci * hw + i) + b.at(ci);
  OpBuild ob = prep("add_chw_bias", {&x, &b}, x.shape());
  if (ob) {
    const int nx = x.node(), nb = b.node();
    ob.g->add_record("add_chw_bias", {nx, nb}, ob.node, [nx, nb, c, hw](const std::vector<double>& g, GradSink& s) {
      s.accumulate(nx, g.data(), c * hw);
      if (nb >= 0) {
        std::vector<double> db(static_cast<size_t>(c), 0.0);
        for (int64_t ci = 0; ci < c; ++ci)
          for (int64_t i = 0; i < hw; ++i) db[ci] += g[ci * hw + i];
        s.accumulate(nb, db.data(), c);
      }
    });
  }
  return make_op_output(x.shape(), std::move(out), ob.g, ob.node);
}

Tensor mul_chw_scale(const Tensor& x, const Tensor& v) {
  require_rank("mul_chw_scale", x, 3);
  require_rank("mul_chw_scale", v, 1);
  const int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (v.dim(0) != c) {
    throw std::invalid_argument("mul_chw_scale: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(v.shape()));
  }
  std::vector<double> out(static_cast<size_t>(c * hw));
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < hw; ++i) out[ci * hw + i] = x.at(ci * hw + i) * v.at(ci);
  OpBuild ob = prep("mul_chw_scale", {&x, &v}, x.shape());
  if (ob) {
    const int nx = x.node(), nv = v.node();
    Tensor sx = x, sv = v;
    ob.g->add_record("mul_chw_scale", {nx, nv}, ob.node,
                     [nx, nv, c, hw, sx, sv](const std::vector<double>& g, GradSink& s) {
                       if (nx >= 0) {
                         std::vector<double> dx(static_cast<size_t>(c * hw));
                         for (int64_t ci = 0; ci < c; ++ci)
                           for (int64_t i = 0; i < hw; ++i) dx[ci * hw + i] = g[ci * hw + i] * sv.at(ci);
                         s.accumulate(nx, dx.data(), c * hw);
                       }
                       if (nv >= 0) {
                         std::vector<double> dv(static_cast<size_t>(c), 0.0);
                         for (int64_t ci = 0; ci < c; ++ci)
                           for (int64_t i = 0; i < hw; ++i) dv[ci] += g[ci * hw + i] * sx.at(ci * hw + i);
                         s.accumulate(nv, dv.data(), c);
                       }
                     });
  }
  return make_op_output(x.shape(), std::move(out), ob.g, ob.node);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m * n));
  gemm(false, false, m, n, k, a.ptr(), b.ptr(), out.data());
  Shape shape{m, n};
  OpBuild ob = prep("matmul", {&a, &b}, shape);
  if (ob) {
    const int na = a.node(), nb = b.node();
    Tensor sa = a, sb = b;
    ob.g->add_record("matmul", {na, nb}, ob.node, [na, nb, m, n, k, sa, sb](const std::vector<double>& g, GradSink& s) {
      if (na >= 0) {
        std::vector<double> da(static_cast<size_t>(m * k));
        gemm(false, true, m, k, n, g.data(), sb.ptr(), da.data());
        s.accumulate(na, da.data(), m * k);
      }
      if (nb >= 0) {
        std::vector<double> db(static_cast<size_t>(k * n));
        gemm(true, false, k, n, m, sa.ptr(), g.data(), db.data());
        s.accumulate(nb, db.data(), k * n);
      }
    });
  }
  return make_op_output(std::move(shape), std::move(out), ob.g, ob.node);
}

Tensor gather_rows(const Tensor& table, const std::vector<int32_t>& ids) {
  require_rank("gather_rows", table, 2);
  if (ids.empty()) throw std::invalid_argument("gather_rows: empty id list");
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int32_t id : ids) {
    if (id < 0 || id >= v) {
      throw std::invalid_argument("gather_rows: id " + std::to_string(id) + " out of range for table " +
                                  shape_str(table.shape()));
    }
  }
  const int64_t l = static_cast<int64_t>(ids.size());
  std::vector<double> out(static_cast<size_t>(l * d));
  for (int64_t i = 0; i < l; ++i) {
    std::memcpy(out.data() + i * d, table.ptr() + static_cast<int64_t>(ids[i]) * d,
                static_cast<size_t>(d) * sizeof(double));
  }
  Shape shape{l, d};
  OpBuild ob = prep("gather_rows", {&table}, shape);
  if (ob) {
    const int nt = table.node();
    ob.g->add_record("gather_rows", {nt}, ob.node, [nt, ids, v, d, l](const std::vector<double>& g, GradSink& s) {
      std::vector<double> dt(static_cast<size_t>(v * d), 0.0);
      for (int64_t i = 0; i < l; ++i) {
        double* dst = dt.data() + static_cast<int64_t>(ids[i]) * d;
        const double* src = g.data() + i * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
      s.accumulate(nt, dt.data(), v * d);
    });
  }
  return make_op_output(std::move(shape), std::move(out), ob.g, ob.node);
}

Tensor softmax_lastdim(const Tensor& a) {
  require_finite("softmax", a);
  if (a.rank() < 1) throw std::invalid_argument("softmax: rank must be >= 1");
  const int64_t d = a.shape().back();
  const int64_t rows = a.numel() / d;
  std::vector<double> out(static_cast<size_t>(rows * d));
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.ptr() + r * d;
    double* y = out.data() + r * d;
    double mx = x[0];
    for (int64_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    for (int64_t i = 0; i < d; ++i) y[i] /= sum;
  }
  OpBuild ob = prep("softmax", {&a}, a.shape());
  Tensor result = make_op_output(a.shape(), std::move(out), ob.g, ob.node);
  if (ob) {
    const int na = a.node();
    Tensor sy = result;
    ob.g->add_record("softmax", {na}, ob.node, [na, rows, d, sy](const std::vector<double>& g, GradSink& s) {
      std::vector<double> da(static_cast<size_t>(rows * d));
      for (int64_t r = 0; r < rows; ++r) {
        const double* y = sy.ptr() + r * d;
        const double* gr = g.data() + r * d;
        double dot = 0.0;
        for (int64_t i = 0; i < d; ++i) dot += gr[i] * y[i];
        for (int64_t i = 0; i < d; ++i) da[r * d + i] = y[i] * (gr[i] - dot);
      }
      s.accumulate(na, da.data(), rows * d);
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& a, double eps) {
  require_rank("layer_norm", a, 2);
  const int64_t n = a.dim(0), d = a.dim(1);
  std::vector<double> out(static_cast<size_t>(n * d));
  std::vector<double> inv_std(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    const double* x = a.ptr() + r * d;
    double mu = 0.0;
    for (int64_t i = 0; i < d; ++i) mu += x[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t i = 0; i < d; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int64_t i = 0; i < d; ++i) out[r * d + i] = (x[i] - mu) * is;
  }
  OpBuild ob = prep("layer_norm", {&a}, a.shape());
  Tensor result = make_op_output(a.shape(), std::move(out), ob.g, ob.node);
  if (ob) {
    const int na = a.node();
    Tensor xhat = result;
    ob.g->add_record("layer_norm", {na}, ob.node,
                     [na, n, d, xhat, inv_std](const std::vector<double>& g, GradSink& s) {
                       std::vector<double> da(static_cast<size_t>(n * d));
                       const double dd = static_cast<double>(d);
                       for (int64_t r = 0; r < n; ++r) {
                         const double* xh = xhat.ptr() + r * d;
                         const double* gr = g.data() + r * d;
                         double gsum = 0.0, gx = 0.0;
                         for (int64_t i = 0; i < d; ++i) {
                           gsum += gr[i];
                           gx += gr[i] * xh[i];
                         }
                         for (int64_t i = 0; i < d; ++i) {
                           da[r * d + i] = inv_std[r] / dd * (dd * gr[i] - gsum - xh[i] * gx);
                         }
                       }
                       s.accumulate(na, da.data(), n * d);
                     });
  }
  return result;
}

Tensor group_norm(const Tensor& a, int64_t groups, double eps) {
  require_rank("group_norm", a, 3);
  require_finite("group_norm", a);
  const int64_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (groups <= 0 || c % groups != 0) {
    throw std::invalid_argument("group_norm: channels " + std::to_string(c) + " not divisible by groups " +
                                std::to_string(groups));
  }
  const int64_t gsz = (c / groups) * h * w;
  std::vector<double> out(static_cast<size_t>(c * h * w));
  std::vector<double> inv_std(static_cast<size_t>(groups));
  for (int64_t g = 0; g < groups; ++g) {
    const double* x = a.ptr() + g * gsz;
    double mu = 0.0;
    for (int64_t i = 0; i < gsz; ++i) mu += x[i];
    mu /= static_cast<double>(gsz);
    double var = 0.0;
    for (int64_t i = 0; i < gsz; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<double>(gsz);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[g] = is;
    for (int64_t i = 0; i < gsz; ++i) out[g * gsz + i] = (x[i] - mu) * is;
  }
  OpBuild ob = prep("group_norm", {&a}, a.shape());
  Tensor result = make_op_output(a.shape(), std::move(out), ob.g, ob.node);
  if (ob) {
    const int na = a.node();
    Tensor xhat = result;
    ob.g->add_record("group_norm", {na}, ob.node,
                     [na, groups, gsz, xhat, inv_std](const std::vector<double>& g, GradSink& s) {
                       std::vector<double> da(xhat.data().size());
                       const double m = static_cast<double>(gsz);
                       for (int64_t gi = 0; gi < groups; ++gi) {
                         const double* xh = xhat.ptr() + gi * gsz;
                         const double* gr = g.data() + gi * gsz;
                         double gsum = 0.0, gx = 0.0;
                         for (int64_t i = 0; i < gsz; ++i) {
                           gsum += gr[i];
                           gx += gr[i] * xh[i];
                         }
                         for (int64_t i = 0; i < gsz; ++i) {
                           da[gi * gsz + i] = inv_std[gi] / m * (m * gr[i] - gsum - xh[i] * gx);
                         }
                       }
                       s.accumulate(na, da.data(), static_cast<int64_t>(da.size()));
                     });
  }
  return result;
}

Tensor conv2d(const Tensor& x, const Tensor& w, int pad) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", w, 4);
  const int64_t ci = x.dim(0), h = x.dim(1), ww = x.dim(2);
  const int64_t co = w.dim(0), kk = w.dim(2);
  if (w.dim(1) != ci || w.dim(3) != kk) {
    throw std::invalid_argument("conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                                shape_str(x.shape()));
  }
  const int64_t oh = h + 2 * pad - kk + 1;
  const int64_t ow = ww + 2 * pad - kk + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  const int64_t patch = ci * kk * kk;
  std::vector<double> cols(static_cast<size_t>(patch * oh * ow));
  im2col(x.ptr(), ci, h, ww, kk, pad, oh, ow, cols.data());
  std::vector<double> out(static_cast<size_t>(co * oh * ow));
  gemm(false, false, co, oh * ow, patch, w.ptr(), cols.data(), out.data());
  Shape shape{co, oh, ow};
  OpBuild ob = prep("conv2d", {&x, &w}, shape);
  if (ob) {
    const int nx = x.node(), nw = w.node();
    Tensor sx = x, sw = w;
    ob.g->add_record("conv2d", {nx, nw}, ob.node,
                     [nx, nw, sx, sw, pad, ci, h, ww, co, kk, oh, ow, patch](const std::vector<double>& g, GradSink& s) {
                       if (nw >= 0) {
                         std::vector<double> cols(static_cast<size_t>(patch * oh * ow));
                         im2col(sx.ptr(), ci, h, ww, kk, pad, oh, ow, cols.data());
                         std::vector<double> dw(static_cast<size_t>(co * patch));
                         gemm(false, true, co, patch, oh * ow, g.data(), cols.data(), dw.data());
                         s.accumulate(nw, dw.data(), co * patch);
                       }
                       if (nx >= 0) {
                         std::vector<double> dcols(static_cast<size_t>(patch * oh * ow));
                         gemm(true, false, patch, oh * ow, co, sw.ptr(), g.data(), dcols.data());
                         std::vector<double> dx(static_cast<size_t>(ci * h * ww), 0.0);
                         col2im_add(dcols.data(), ci, h, ww, kk, pad, oh, ow, dx.data());
                         s.accumulate(nx, dx.data(), ci * h * ww);
                       }
                     });
  }
  return make_op_output(std::move(shape), std::move(out), ob.g, ob.node);
}

Tensor avg_pool2(const Tensor& x) {
  require_rank("avg_pool2", x, 3);
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("avg_pool2: spatial dims must be even, got " + shape_str(x.shape()));
  }
  const int64_t oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<size_t>(c * oh * ow));
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t y = 0; y < oh; ++y) {
      for (int64_t xx = 0; xx < ow; ++xx) {
        const double* p = x.ptr() + (ci * h + 2 * y) * w + 2 * xx;
        out[(ci * oh + y) * ow + xx] = 0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
      }
    }
  }
  Shape shape{c, oh, ow};
  OpBuild ob = prep("avg_pool2", {&x}, shape);
  if (ob) {
    const int nx = x.node();
    ob.g->add_record("avg_pool2", {nx}, ob.node, [nx, c, h, w, oh, ow](const std::vector<double>& g, GradSink& s) {
      std::vector<double> dx(static_cast<size_t>(c * h * w));
      for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t y = 0; y < oh; ++y) {
          for (int64_t xx = 0; xx < ow; ++xx) {
            const double gv = 0.25 * g[(ci * oh + y) * ow + xx];
            double* p = dx.data() + (ci * h + 2 * y) * w + 2 * xx;
            p[0] = gv;
            p[1] = gv;
            p[w] = gv;
            p[w + 1] = gv;
          }
        }
      }
      s.accumulate(nx, dx.data(), c * h * w);
    });
  }
  return make_op_output(std::move(shape), std::move(out), ob.g, ob.node);
}

Tensor upsample2(const Tensor& x) {
  require_rank("upsample2", x, 3);
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t oh = 2 * h, ow = 2 * w;
  std::vector<double> out(static_cast<size_t>(c * oh * ow));
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t y = 0; y < oh; ++y) {
      const double* src = x.ptr() + (ci * h + y / 2) * w;
      double* dst = out.data() + (ci * oh + y) * ow;
      for (int64_t xx = 0; xx < ow; ++xx) dst[xx] = src[xx / 2];
    }
  }
  Shape shape{c, oh, ow};
  OpBuild ob = prep("upsample2", {&x}, shape);
  if (ob) {
    const int nx = x.node();
    ob.g->add_record("upsample2", {nx}, ob.node, [nx, c, h, w, oh, ow](const std::vector<double>& g, GradSink& s) {
      std::vector<double> dx(static_cast<size_t>(c * h * w), 0.0);
      for (int64_t ci = 0; ci < c; ++ci) {
        for (int64_t y = 0; y < oh; ++y) {
          const double* src = g.data() + (ci * oh + y) * ow;
          double* dst = dx.data() + (ci * h + y / 2) * w;
          for (int64_t xx = 0; xx < ow; ++xx) dst[xx / 2] += src[xx];
        }
      }
      s.accumulate(nx, dx.data(), c * h * w);
    });
  }
  return make_op_output(std::move(shape), std::move(out), ob.g, ob.node);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::vector<uint8_t>& key_mask, Tensor* weights_out) {
  require_rank("attention", q, 2);
  require_rank("attention", k, 2);
  require_rank("attention", v, 2);
  require_finite("attention", q);
  require_finite("attention", k);
  require_finite("attention", v);
  const int64_t nq = q.dim(0), dk = q.dim(1);
  const int64_t nk = k.dim(0), dv = v.dim(1);
  if (k.dim(1) != dk || v.dim(0) != nk) {
    throw std::invalid_argument("attention: shapes q" + shape_str(q.shape()) + " k" + shape_str(k.shape()) +
                                " v" + shape_str(v.shape()) + " do not conform");
  }
  if (!key_mask.empty()) {
    if (static_cast<int64_t>(key_mask.size()) != nk) {
      throw std::invalid_argument("attention: mask size " + std::to_string(key_mask.size()) +
                                  " != key count " + std::to_string(nk));
    }
    bool any = false;
    for (uint8_t m : key_mask) any = any || (m != 0);
    if (!any) throw std::invalid_argument("attention: all keys masked out");
  }

  const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> logits(static_cast<size_t>(nq * nk));
  gemm(false, true, nq, nk, dk, q.ptr(), k.ptr(), logits.data());
  auto weights = std::make_shared<std::vector<double>>(static_cast<size_t>(nq * nk));
  for (int64_t r = 0; r < nq; ++r) {
    double* lr = logits.data() + r * nk;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < nk; ++j) {
      lr[j] *= sc;
      if (key_mask.empty() || key_mask[static_cast<size_t>(j)]) mx = std::max(mx, lr[j]);
    }
    double sum = 0.0;
    double* wr = weights->data() + r * nk;
    for (int64_t j = 0; j < nk; ++j) {
      if (!key_mask.empty() && !key_mask[static_cast<size_t>(j)]) {
        wr[j] = 0.0;
      } else {
        wr[j] = std::exp(lr[j] - mx);
        sum += wr[j];
      }
    }
    for (int64_t j = 0; j < nk; ++j) wr[j] /= sum;
  }
  std::vector<double> out(static_cast<size_t>(nq * dv));
  gemm(false, false, nq, dv, nk, weights->data(), v.ptr(), out.data());
  if (weights_out != nullptr) {
    *weights_out = Tensor::constant_shared(Shape{nq, nk}, weights);
  }
  Shape shape{nq, dv};
  OpBuild ob = prep("attention", {&q, &k, &v}, shape);
  if (ob) {
    const int nq_n = q.node(), nk_n = k.node(), nv_n = v.node();
    Tensor sq = q, sk = k, sv = v;
    ob.g->add_record("attention", {nq_n, nk_n, nv_n}, ob.node,
                     [nq_n, nk_n, nv_n, sq, sk, sv, weights, nq, nk, dk, dv, sc](const std::vector<double>& g,
                                                                                 GradSink& s) {
                       const double* w = weights->data();
                       if (nv_n >= 0) {
                         std::vector<double> dvv(static_cast<size_t>(nk * dv));
                         gemm(true, false, nk, dv, nq, w, g.data(), dvv.data());
                         s.accumulate(nv_n, dvv.data(), nk * dv);
                       }
                       if (nq_n >= 0 || nk_n >= 0) {
                         std::vector<double> dw(static_cast<size_t>(nq * nk));
                         gemm(false, true, nq, nk, dv, g.data(), sv.ptr(), dw.data());
                         // softmax backward per row, then scale by 1/sqrt(dk)
                         std::vector<double> dl(static_cast<size_t>(nq * nk));
                         for (int64_t r = 0; r < nq; ++r) {
                           double dot = 0.0;
                           for (int64_t j = 0; j < nk; ++j) dot += dw[r * nk + j] * w[r * nk + j];
                           for (int64_t j = 0; j < nk; ++j) {
                             dl[r * nk + j] = sc * w[r * nk + j] * (dw[r * nk + j] - dot);
                           }
                         }
                         if (nq_n >= 0) {
                           std::vector<double> dq(static_cast<size_t>(nq * dk));
                           gemm(false, false, nq, dk, nk, dl.data(), sk.ptr(), dq.data());
                           s.accumulate(nq_n, dq.data(), nq * dk);
                         }
                         if (nk_n >= 0) {
                           std::vector<double> dkk(static_cast<size_t>(nk * dk));
                           gemm(true, false, nk, dk, nq, dl.data(), sq.ptr(), dkk.data());
                           s.accumulate(nk_n, dkk.data(), nk * dk);
                         }
                       }
                     });
  }
  return make_op_output(std::move(shape), std::move(out), ob.g, ob.node);
}

const std::vector<const char*>& registered_op_names() {
  static const std::vector<const char*> names = {
      "add",        "sub",        "mul",          "scale",       "reshape",  "concat",
      "transpose2", "silu",       "sum_all",      "add_rowvec",  "mul_rowvec",
      "add_chw_bias", "mul_chw_scale", "matmul",  "gather_rows", "softmax",  "layer_norm",
      "group_norm", "conv2d",     "avg_pool2",    "upsample2",   "attention"};
  return names;
}

double finite_diff_check(const ScalarFn& f, const Tensor& x0, FdOptions opt) {
  if (!(opt.eps > 0.0) || opt.eps > 1e-2) {
    throw std::invalid_argument("finite_diff_check: eps must be in (0, 1e-2], got " + std::to_string(opt.eps));
  }
  auto eval = [&](const std::vector<double>& xv) -> double {
    Graph g;
    Tensor x = g.leaf(x0.shape(), xv, /*requires_grad=*/false);
    Tensor y = f(x, g);
    if (y.numel() != 1) throw std::invalid_argument("finite_diff_check: f must return a scalar");
    return y.value();
  };

  const double y1 = eval(x0.data());
  const double y2 = eval(x0.data());
  if (std::memcmp(&y1, &y2, sizeof(double)) != 0) {
    throw std::invalid_argument("finite_diff_check: f is not deterministic");
  }

  Graph g;
  Tensor x = g.leaf(x0.shape(), x0.data(), /*requires_grad=*/true);
  Tensor y = f(x, g);
  if (y.numel() != 1) throw std::invalid_argument("finite_diff_check: f must return a scalar");
  GradientMap grads = g.backward(y);
  const Tensor& ga = grads.at(x.node());

  std::vector<double> xv = x0.data();
  double max_err = 0.0;
  for (size_t i = 0; i < xv.size(); ++i) {
    const double orig = xv[i];
    xv[i] = orig + opt.eps;
    const double yp = eval(xv);
    xv[i] = orig - opt.eps;
    const double ym = eval(xv);
    xv[i] = orig;
    const double gn = (yp - ym) / (2.0 * opt.eps);
    const double gai = ga.at(static_cast<int64_t>(i));
    if (std::abs(gai) <= opt.abs_floor && std::abs(gn) <= opt.abs_floor) continue;
    const double err = std::abs(gai - gn) / (std::abs(gn) + 1e-12);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace pplus

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pplus/graph.hpp"
#include "pplus/tensor.hpp"

namespace pplus {

// Elementwise / structural -------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor transpose2(const Tensor& a);  // (m,n) -> (n,m)
Tensor silu(const Tensor& a);
Tensor sum_all(const Tensor& a);  // -> shape (1)

// Broadcast helpers (the only broadcasting beyond tensor-scalar) -----------
Tensor add_rowvec(const Tensor& x, const Tensor& b);   // (n,m) + (m)
Tensor mul_rowvec(const Tensor& x, const Tensor& s);   // (n,m) * (m)
Tensor add_chw_bias(const Tensor& x, const Tensor& b); // (c,h,w) + (c)
Tensor mul_chw_scale(const Tensor& x, const Tensor& s);// (c,h,w) * (c)

// Linear algebra ------------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k)x(k,n)
Tensor gather_rows(const Tensor& table, const std::vector<int32_t>& ids);  // (v,d) -> (|ids|,d)

// Normalization / activations ----------------------------------------------
Tensor softmax_lastdim(const Tensor& a);
Tensor layer_norm(const Tensor& a, double eps = 1e-5);             // rows of (n,d)
Tensor group_norm(const Tensor& a, int64_t groups, double eps = 1e-5);  // (c,h,w)

// Image ops ------------------------------------------------------------------
Tensor conv2d(const Tensor& x, const Tensor& w, int pad);  // x (ci,h,w), w (co,ci,k,k), stride 1
Tensor avg_pool2(const Tensor& x);   // (c,h,w) -> (c,h/2,w/2)
Tensor upsample2(const Tensor& x);   // nearest, (c,h,w) -> (c,2h,2w)

// Scaled dot-product attention over a single head. q (nq,dk), k (nk,dk),
// v (nk,dv); key_mask (optional, size nk) zeroes out masked keys. The
// normalized weights computed during the forward pass are exposed through
// weights_out so analysis hooks see exactly what the op used.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::vector<uint8_t>& key_mask = {},
                 Tensor* weights_out = nullptr);

// Gradient checking ----------------------------------------------------------
struct FdOptions {
  double eps = 1e-5;
  // Component pairs where both |analytic| and |numeric| fall below this
  // floor count as matching (a constant function has error ~0, not 0/0).
  double abs_floor = 1e-9;
};

using ScalarFn = std::function<Tensor(const Tensor& x, Graph& g)>;

// Max over components of |g_analytic - g_numeric| / (|g_numeric| + 1e-12),
// with g_numeric from central differences of step eps. Rejects eps outside
// (0, 1e-2] and functions that disagree between two evaluations.
double finite_diff_check(const ScalarFn& f, const Tensor& x0, FdOptions opt = {});

// Names of every registered differentiable op; the gradient property suite
// iterates this list so a new op cannot silently skip coverage.
const std::vector<const char*>& registered_op_names();

}  // namespace pplus

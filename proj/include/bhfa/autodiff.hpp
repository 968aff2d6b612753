#pragma once

#include <functional>
#include <vector>

#include "bhfa/tensor.hpp"

namespace bhfa::ad {

// Handle into a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over Tensors. Ops record a backward closure only when
// some input requires gradients, so inference-only graphs cost just the
// forward arithmetic. Node order is creation order, which is already a
// topological order for backward().
class Tape {
 public:
  Var leaf(const Tensor& value, bool requires_grad);
  Var leaf(Tensor&& value, bool requires_grad);

  const Tensor& val(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v);  // zero tensor if no gradient reached v
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Seeds d(root)/d(root) = 1 and propagates to all leaves. Root must be a
  // scalar (numel == 1).
  void backward(Var root);

  // ---- elementwise ----
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var exp(Var a);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var clamp(Var a, double lo, double hi);
  Var mul_const(Var a, const Tensor& c);  // elementwise by a non-grad tensor

  // ---- linear algebra ----
  // x: (N,F), w: (O,F) -> (N,O); y = x w^T
  Var matmul_wt(Var x, Var w);
  // x: (N,O), b: (O) -> (N,O); adds b to every row
  Var add_rowvec(Var x, Var b);

  // ---- image ops (NCHW) ----
  Var conv2d(Var x, Var w, Var b, int pad);  // b may be invalid for no bias
  Var maxpool2(Var x);
  Var upsample2(Var x);
  Var pool_hw_avg(Var x);   // (N,C,H,W) -> (N,C)
  Var pool_hw_max(Var x);   // (N,C,H,W) -> (N,C)
  Var spatial_stats(Var x); // (N,C,H,W) -> (N,2,H,W): mean over C, max over C
  Var mul_channels(Var x, Var s);  // scale (N,C,H,W) by (N,C)
  Var mul_spatial(Var x, Var m);   // scale (N,C,H,W) by (N,1,H,W)
  Var reshape(Var x, std::vector<int> shape);

  // ---- rows / columns ----
  Var slice_cols(Var x, int c0, int len);

  // ---- distribution ops ----
  // Bhattacharyya coefficients between row-wise diagonal Gaussians:
  // (mu_a, ls_a): (A,d), (mu_b, ls_b): (B,d) -> (A,B), clamped to
  // [kBcFloor, 1].
  Var bc_matrix(Var mu_a, Var ls_a, Var mu_b, Var ls_b);
  // Moment-matched Gaussian of the uniform mixture per group.
  // mu, ls: (M,d); group[i] in [0,K) -> (K, 2d) rows [mean | log_std].
  Var aggregate_gaussians(Var mu, Var ls, const std::vector<int>& group, int k);

  // ---- reductions / losses ----
  Var sum(Var a);  // scalar
  Var log_softmax_rows(Var logits);
  // mean over rows of -logp[r, labels[r]]; scalar
  Var nll_rows(Var logp, const std::vector<int>& labels);
  // mean |x - ref| over all elements; scalar
  Var mean_abs_ref(Var x, const Tensor& ref);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::function<void(Tape&)> back;
  };

  std::vector<Node> nodes_;

  Var push(Tensor value, bool requires_grad);
  Tensor& grad_buf(int id);
  void accum(int id, const Tensor& g);
  friend struct TapeDetail;
};

constexpr double kBcFloor = 1e-300;

}  // namespace bhfa::ad

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "grpg/tensor.hpp"

namespace grpg {

// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
// insertion order is a valid reverse-topological order for backward().
// A tape is confined to one training step / one thread.
class Tape {
public:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool needs_grad = false;
    bool grad_alloc = false;
    std::vector<int> parents;
    // Pulls this node's grad and accumulates into parent grads.
    std::function<void(Tape&, int)> backward;
  };

  int leaf(const Tensor& t);      // needs_grad taken from t.requires_grad
  int constant(const Tensor& t);  // never receives gradient

  const Tensor& val(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  const Tensor& grad(int id);  // zeros when the node never got gradient
  size_t size() const { return nodes_.size(); }

  // Backward from a scalar node; each reachable node visited exactly once.
  void backward(int loss_id);

  // internal use by ops
  int add_node(Tensor value, std::vector<int> parents,
               std::function<void(Tape&, int)> bw);
  Tensor& grad_buf(int id);
  Node& node(int id) { return nodes_[id]; }

private:
  std::vector<Node> nodes_;
};

// Lightweight handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& val() const { return tape->val(id); }
  const std::vector<int>& shape() const { return tape->val(id).shape; }
  bool needs_grad() const { return tape->needs_grad(id); }
};

Var make_leaf(Tape& t, const Tensor& v);
Var make_const(Tape& t, const Tensor& v);
Var make_const_scalar(Tape& t, double v);

// ---- elementwise / arithmetic ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var mul_scalar_var(Var x, Var s);  // s is a 1-element tensor

// ---- activations / clamps ----
Var sigmoid(Var a);
Var silu(Var a);
Var relu(Var a);
// Subgradient: identity where lo <= x <= hi, zero outside.
Var clamp(Var a, double lo, double hi);
// Inverted dropout with a mask drawn once at graph build time.
Var dropout(Var a, double p, RandomStream& rng);

// ---- linear algebra ----
Var matmul(Var a, Var b);              // (m x k) * (k x n)
Var linear(Var x, Var w, Var b);       // x*w + row-broadcast bias
Var transpose2d(Var a);
Var reshape(Var a, std::vector<int> s);
Var slice_cols(Var a, int c0, int c1);     // 2-D column block [c0, c1)
Var concat_rows(Var a, Var b);             // 2-D stacking
Var concat_cols(Var a, Var b);
Var gather_flat(Var a, std::vector<size_t> idx, std::vector<int> out_shape);
Var gather_rows(Var a, const std::vector<int>& rows);

// ---- normalizations / softmax ----
Var softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps);
Var group_norm(Var x, int groups, double eps);  // C x H x W, normalize only

// ---- channel / spatial broadcasts (C x H x W tensors) ----
Var scale_channels(Var z, Var s);  // out[c,y,x] = z[c,y,x] * s[c]
Var shift_channels(Var z, Var b);  // out[c,y,x] = z[c,y,x] + b[c]
Var mul_spatial(Var z, Var m);     // out[c,y,x] = z[c,y,x] * m[y,x]
Var scale_rows(Var x, Var r);      // 2-D: out[i,j] = x[i,j] * r[i]

// ---- reductions / losses ----
Var sum_all(Var a);   // -> shape {1}
Var mean_all(Var a);  // -> shape {1}
Var l2_norm(Var a);   // -> shape {1}; subgradient 0 at the origin
Var sum_squares(Var a);
Var mse(Var a, Var b);                 // sum of squared differences
Var smooth_l1(Var pred, Var target);   // scalar Huber, transition at 1
Var hinge(Var s);                      // max(0, s) picked by value at build time

// Runs `build` over leaves made from `params`, backpropagates from the
// scalar it returns, and reports the loss value plus per-parameter grads.
struct ForwardBackwardResult {
  double value = 0.0;
  std::map<std::string, Tensor> grads;
};
ForwardBackwardResult forward_backward(
    const std::vector<std::pair<std::string, Tensor>>& params,
    const std::function<Var(Tape&, std::map<std::string, Var>&)>& build);

// Central-difference gradient oracle: (f(x+eps e_i) - f(x-eps e_i)) / (2 eps).
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, double eps);

}  // namespace grpg

#include "grpg/tape.hpp"

#include <cmath>
#include <utility>

namespace grpg {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    fail(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

bool any_needs_grad(Tape& t, const std::vector<int>& parents) {
  for (int p : parents)
    if (t.needs_grad(p)) return true;
  return false;
}

}  // namespace

int Tape::leaf(const Tensor& t) {
  Node n;
  n.value = t;
  n.needs_grad = t.requires_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant(const Tensor& t) {
  Node n;
  n.value = t;
  n.value.requires_grad = false;
  n.needs_grad = false;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::add_node(Tensor value, std::vector<int> parents,
                   std::function<void(Tape&, int)> bw) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.needs_grad = any_needs_grad(*this, n.parents);
  if (n.needs_grad) n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[id];
  if (!n.grad_alloc) {
    n.grad = Tensor::zeros(n.value.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(int id) { return grad_buf(id); }

void Tape::backward(int loss_id) {
  const Tensor& loss = nodes_[loss_id].value;
  if (loss.numel() != 1)
    fail("backward: loss must be scalar, got shape " + loss.shape_str());
  // mark nodes reachable from the loss
  std::vector<char> reach(nodes_.size(), 0);
  reach[loss_id] = 1;
  for (int i = loss_id; i >= 0; --i) {
    if (!reach[i] || !nodes_[i].needs_grad) continue;
    for (int p : nodes_[i].parents) reach[p] = 1;
  }
  grad_buf(loss_id)[0] = 1.0;
  for (int i = loss_id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!reach[i] || !n.needs_grad || !n.backward) continue;
    if (!n.grad_alloc) grad_buf(i);
    n.backward(*this, i);
  }
}

Var make_leaf(Tape& t, const Tensor& v) { return Var{&t, t.leaf(v)}; }
Var make_const(Tape& t, const Tensor& v) { return Var{&t, t.constant(v)}; }
Var make_const_scalar(Tape& t, double v) { return Var{&t, t.constant(Tensor::scalar(v))}; }

// ---- elementwise ----

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  require_same_shape(av, bv, "add");
  Tensor out = av;
  for (size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  int id = t.add_node(std::move(out), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    if (t.needs_grad(a.id)) {
      Tensor& ga = t.grad_buf(a.id);
      for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b.id)) {
      Tensor& gb = t.grad_buf(b.id);
      for (size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  });
  return Var{&t, id};
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  require_same_shape(av, bv, "sub");
  Tensor out = av;
  for (size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  int id = t.add_node(std::move(out), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    if (t.needs_grad(a.id)) {
      Tensor& ga = t.grad_buf(a.id);
      for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b.id)) {
      Tensor& gb = t.grad_buf(b.id);
      for (size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
  return Var{&t, id};
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  int id = t.add_node(std::move(out), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& av = t.val(a.id);
    const Tensor& bv = t.val(b.id);
    if (t.needs_grad(a.id)) {
      Tensor& ga = t.grad_buf(a.id);
      for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b.id)) {
      Tensor& gb = t.grad_buf(b.id);
      for (size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
  return Var{&t, id};
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  Tensor out = a.val();
  for (double& v : out.data) v *= c;
  int id = t.add_node(std::move(out), {a.id}, [a, c](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(a.id);
    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * c;
  });
  return Var{&t, id};
}

Var add_scalar(Var a, double c) {
  Tape& t = *a.tape;
  Tensor out = a.val();
  for (double& v : out.data) v += c;
  int id = t.add_node(std::move(out), {a.id}, [a](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(a.id);
    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
  return Var{&t, id};
}

Var mul_scalar_var(Var x, Var s) {
  Tape& t = *x.tape;
  const Tensor& sv = s.val();
  if (sv.numel() != 1) fail("mul_scalar_var: scalar operand has shape " + sv.shape_str());
  Tensor out = x.val();
  double c = sv[0];
  for (double& v : out.data) v *= c;
  int id = t.add_node(std::move(out), {x.id, s.id}, [x, s](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& xv = t.val(x.id);
    double c = t.val(s.id)[0];
    if (t.needs_grad(x.id)) {
      Tensor& gx = t.grad_buf(x.id);
      for (size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * c;
    }
    if (t.needs_grad(s.id)) {
      double acc = 0.0;
      for (size_t i = 0; i < g.numel(); ++i) acc += g[i] * xv[i];
      t.grad_buf(s.id)[0] += acc;
    }
  });
  return Var{&t, id};
}

// ---- activations ----

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Tensor out = a.val();
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  int id = t.add_node(std::move(out), {a.id}, [a](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& y = t.val(self);
    Tensor& ga = t.grad_buf(a.id);
    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
  return Var{&t, id};
}

Var silu(Var a) {
  Tape& t = *a.tape;
  Tensor out = a.val();
  for (double& v : out.data) v = v / (1.0 + std::exp(-v));
  int id = t.add_node(std::move(out), {a.id}, [a](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& x = t.val(a.id);
    Tensor& ga = t.grad_buf(a.id);
    for (size_t i = 0; i < g.numel(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-x[i]));
      ga[i] += g[i] * (s + x[i] * s * (1.0 - s));
    }
  });
  return Var{&t, id};
}

Var relu(Var a) {
  Tape& t = *a.tape;
  Tensor out = a.val();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  int id = t.add_node(std::move(out), {a.id}, [a](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& x = t.val(a.id);
    Tensor& ga = t.grad_buf(a.id);
    for (size_t i = 0; i < g.numel(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
  return Var{&t, id};
}

Var clamp(Var a, double lo, double hi) {
  Tape& t = *a.tape;
  Tensor out = a.val();
  for (double& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
  int id = t.add_node(std::move(out), {a.id}, [a, lo, hi](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& x = t.val(a.id);
    Tensor& ga = t.grad_buf(a.id);
    for (size_t i = 0; i < g.numel(); ++i)
      if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
  });
  return Var{&t, id};
}

Var dropout(Var a, double p, RandomStream& rng) {
  Tape& t = *a.tape;
  if (p < 0.0 || p >= 1.0) fail("dropout: rate must be in [0,1)");
  const Tensor& av = a.val();
  std::vector<double> mask(av.numel());
  double keep = 1.0 - p;
  for (double& m : mask) m = (rng.u01() < p) ? 0.0 : 1.0 / keep;
  Tensor out = av;
  for (size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  int id = t.add_node(std::move(out), {a.id},
                      [a, mask = std::move(mask)](Tape& t, int self) {
                        const Tensor& g = t.grad_buf(self);
                        Tensor& ga = t.grad_buf(a.id);
                        for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * mask[i];
                      });
  return Var{&t, id};
}

// ---- linear algebra ----

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.rows())
    fail("matmul: incompatible shapes " + av.shape_str() + " vs " + bv.shape_str());
  int m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      double x = av.at2(i, kk);
      if (x == 0.0) continue;
      for (int j = 0; j < n; ++j) out.at2(i, j) += x * bv.at2(kk, j);
    }
  int id = t.add_node(std::move(out), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& av = t.val(a.id);
    const Tensor& bv = t.val(b.id);
    int m = av.rows(), k = av.cols(), n = bv.cols();
    if (t.needs_grad(a.id)) {  // dA = g * B^T
      Tensor& ga = t.grad_buf(a.id);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double gij = g.at2(i, j);
          if (gij == 0.0) continue;
          for (int kk = 0; kk < k; ++kk) ga.at2(i, kk) += gij * bv.at2(kk, j);
        }
    }
    if (t.needs_grad(b.id)) {  // dB = A^T * g
      Tensor& gb = t.grad_buf(b.id);
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          double ax = av.at2(i, kk);
          if (ax == 0.0) continue;
          for (int j = 0; j < n; ++j) gb.at2(kk, j) += ax * g.at2(i, j);
        }
    }
  });
  return Var{&t, id};
}

Var linear(Var x, Var w, Var b) {
  Tape& t = *x.tape;
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  if (xv.ndim() != 2 || wv.ndim() != 2 || xv.cols() != wv.rows())
    fail("linear: incompatible shapes " + xv.shape_str() + " vs " + wv.shape_str());
  if (bv.numel() != static_cast<size_t>(wv.cols()))
    fail("linear: bias shape " + bv.shape_str() + " does not match output width " +
         std::to_string(wv.cols()));
  int m = xv.rows(), k = xv.cols(), n = wv.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at2(i, j) = bv[j];
    for (int kk = 0; kk < k; ++kk) {
      double v = xv.at2(i, kk);
      if (v == 0.0) continue;
      for (int j = 0; j < n; ++j) out.at2(i, j) += v * wv.at2(kk, j);
    }
  }
  int id = t.add_node(std::move(out), {x.id, w.id, b.id}, [x, w, b](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& xv = t.val(x.id);
    const Tensor& wv = t.val(w.id);
    int m = xv.rows(), k = xv.cols(), n = wv.cols();
    if (t.needs_grad(x.id)) {
      Tensor& gx = t.grad_buf(x.id);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          double gij = g.at2(i, j);
          if (gij == 0.0) continue;
          for (int kk = 0; kk < k; ++kk) gx.at2(i, kk) += gij * wv.at2(kk, j);
        }
    }
    if (t.needs_grad(w.id)) {
      Tensor& gw = t.grad_buf(w.id);
      for (int i = 0; i < m; ++i)
        for (int kk = 0; kk < k; ++kk) {
          double xv_ = xv.at2(i, kk);
          if (xv_ == 0.0) continue;
          for (int j = 0; j < n; ++j) gw.at2(kk, j) += xv_ * g.at2(i, j);
        }
    }
    if (t.needs_grad(b.id)) {
      Tensor& gb = t.grad_buf(b.id);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[j] += g.at2(i, j);
    }
  });
  return Var{&t, id};
}

Var transpose2d(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  if (av.ndim() != 2) fail("transpose2d: tensor is not 2-D: " + av.shape_str());
  int m = av.rows(), n = av.cols();
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at2(j, i) = av.at2(i, j);
  int id = t.add_node(std::move(out), {a.id}, [a](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(a.id);
    int n = g.rows(), m = g.cols();
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) ga.at2(i, j) += g.at2(j, i);
  });
  return Var{&t, id};
}

Var reshape(Var a, std::vector<int> s) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  if (shape_numel(s) != av.numel())
    fail("reshape: cannot reshape " + av.shape_str() + " to " + shape_to_string(s));
  Tensor out = av;
  out.shape = std::move(s);
  int id = t.add_node(std::move(out), {a.id}, [a](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(a.id);
    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
  return Var{&t, id};
}

Var slice_cols(Var a, int c0, int c1) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  if (av.ndim() != 2 || c0 < 0 || c1 > av.cols() || c0 >= c1)
    fail("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
         ") for " + av.shape_str());
  int m = av.rows(), w = c1 - c0;
  Tensor out({m, w});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) out.at2(i, j) = av.at2(i, c0 + j);
  int id = t.add_node(std::move(out), {a.id}, [a, c0, w](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(a.id);
    int m = g.rows();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j) ga.at2(i, c0 + j) += g.at2(i, j);
  });
  return Var{&t, id};
}

Var concat_rows(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.cols())
    fail("concat_rows: incompatible " + av.shape_str() + " vs " + bv.shape_str());
  int ma = av.rows(), mb = bv.rows(), n = av.cols();
  Tensor out({ma + mb, n});
  for (size_t i = 0; i < av.numel(); ++i) out[i] = av[i];
  for (size_t i = 0; i < bv.numel(); ++i) out[av.numel() + i] = bv[i];
  int id = t.add_node(std::move(out), {a.id, b.id}, [a, b, ma](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    int n = g.cols();
    size_t split = static_cast<size_t>(ma) * n;
    if (t.needs_grad(a.id)) {
      Tensor& ga = t.grad_buf(a.id);
      for (size_t i = 0; i < split; ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b.id)) {
      Tensor& gb = t.grad_buf(b.id);
      for (size_t i = 0; i < gb.numel(); ++i) gb[i] += g[split + i];
    }
  });
  return Var{&t, id};
}

Var concat_cols(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.rows() != bv.rows())
    fail("concat_cols: incompatible " + av.shape_str() + " vs " + bv.shape_str());
  int m = av.rows(), na = av.cols(), nb = bv.cols();
  Tensor out({m, na + nb});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < na; ++j) out.at2(i, j) = av.at2(i, j);
    for (int j = 0; j < nb; ++j) out.at2(i, na + j) = bv.at2(i, j);
  }
  int id = t.add_node(std::move(out), {a.id, b.id}, [a, b, na, nb](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    int m = g.rows();
    if (t.needs_grad(a.id)) {
      Tensor& ga = t.grad_buf(a.id);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < na; ++j) ga.at2(i, j) += g.at2(i, j);
    }
    if (t.needs_grad(b.id)) {
      Tensor& gb = t.grad_buf(b.id);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < nb; ++j) gb.at2(i, j) += g.at2(i, na + j);
    }
  });
  return Var{&t, id};
}

Var gather_flat(Var a, std::vector<size_t> idx, std::vector<int> out_shape) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  if (shape_numel(out_shape) != idx.size())
    fail("gather_flat: index count does not match output shape");
  Tensor out(std::move(out_shape));
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= av.numel()) fail("gather_flat: index out of range");
    out[i] = av[idx[i]];
  }
  int id = t.add_node(std::move(out), {a.id},
                      [a, idx = std::move(idx)](Tape& t, int self) {
                        const Tensor& g = t.grad_buf(self);
                        Tensor& ga = t.grad_buf(a.id);
                        for (size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
                      });
  return Var{&t, id};
}

Var gather_rows(Var a, const std::vector<int>& rows) {
  const Tensor& av = a.val();
  if (av.ndim() != 2) fail("gather_rows: tensor is not 2-D: " + av.shape_str());
  int n = av.cols();
  std::vector<size_t> idx;
  idx.reserve(rows.size() * n);
  for (int r : rows)
    for (int j = 0; j < n; ++j) idx.push_back(static_cast<size_t>(r) * n + j);
  return gather_flat(a, std::move(idx), {static_cast<int>(rows.size()), n});
}

// ---- normalizations / softmax ----

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  if (av.ndim() != 2) fail("softmax_rows: tensor is not 2-D: " + av.shape_str());
  int m = av.rows(), n = av.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    double mx = av.at2(i, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, av.at2(i, j));
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      double e = std::exp(av.at2(i, j) - mx);
      out.at2(i, j) = e;
      z += e;
    }
    for (int j = 0; j < n; ++j) out.at2(i, j) /= z;
  }
  int id = t.add_node(std::move(out), {a.id}, [a](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& y = t.val(self);
    Tensor& ga = t.grad_buf(a.id);
    int m = y.rows(), n = y.cols();
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += g.at2(i, j) * y.at2(i, j);
      for (int j = 0; j < n; ++j) ga.at2(i, j) += y.at2(i, j) * (g.at2(i, j) - acc);
    }
  });
  return Var{&t, id};
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  Tape& t = *x.tape;
  const Tensor& xv = x.val();
  if (xv.ndim() != 2) fail("layer_norm_rows: tensor is not 2-D: " + xv.shape_str());
  int m = xv.rows(), n = xv.cols();
  const Tensor& gv = gain.val();
  const Tensor& bv = bias.val();
  if (gv.numel() != static_cast<size_t>(n) || bv.numel() != static_cast<size_t>(n))
    fail("layer_norm_rows: affine shapes " + gv.shape_str() + "/" + bv.shape_str() +
         " do not match width " + std::to_string(n));
  Tensor out({m, n});
  std::vector<double> inv_std(m), means(m);
  for (int i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += xv.at2(i, j);
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      double d = xv.at2(i, j) - mu;
      var += d * d;
    }
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    means[i] = mu;
    inv_std[i] = is;
    for (int j = 0; j < n; ++j)
      out.at2(i, j) = (xv.at2(i, j) - mu) * is * gv[j] + bv[j];
  }
  int id = t.add_node(
      std::move(out), {x.id, gain.id, bias.id},
      [x, gain, bias, means = std::move(means), inv_std = std::move(inv_std)](Tape& t, int self) {
        const Tensor& g = t.grad_buf(self);
        const Tensor& xv = t.val(x.id);
        const Tensor& gv = t.val(gain.id);
        int m = xv.rows(), n = xv.cols();
        for (int i = 0; i < m; ++i) {
          double is = inv_std[i], mu = means[i];
          // xhat and the two row sums used by the input gradient
          double sum_d = 0.0, sum_dx = 0.0;
          for (int j = 0; j < n; ++j) {
            double xh = (xv.at2(i, j) - mu) * is;
            double d = g.at2(i, j) * gv[j];
            sum_d += d;
            sum_dx += d * xh;
          }
          if (t.needs_grad(x.id)) {
            Tensor& gx = t.grad_buf(x.id);
            for (int j = 0; j < n; ++j) {
              double xh = (xv.at2(i, j) - mu) * is;
              double d = g.at2(i, j) * gv[j];
              gx.at2(i, j) += is * (d - sum_d / n - xh * sum_dx / n);
            }
          }
          if (t.needs_grad(gain.id)) {
            Tensor& gg = t.grad_buf(gain.id);
            for (int j = 0; j < n; ++j)
              gg[j] += g.at2(i, j) * (xv.at2(i, j) - mu) * is;
          }
          if (t.needs_grad(bias.id)) {
            Tensor& gb = t.grad_buf(bias.id);
            for (int j = 0; j < n; ++j) gb[j] += g.at2(i, j);
          }
        }
      });
  return Var{&t, id};
}

Var group_norm(Var x, int groups, double eps) {
  Tape& t = *x.tape;
  const Tensor& xv = x.val();
  if (xv.ndim() != 3) fail("group_norm: tensor is not 3-D: " + xv.shape_str());
  int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
  if (groups <= 0 || c % groups != 0)
    fail("group_norm: channel count " + std::to_string(c) + " not divisible by groups " +
         std::to_string(groups));
  int cg = c / groups;
  size_t gsz = static_cast<size_t>(cg) * h * w;
  Tensor out(xv.shape);
  std::vector<double> means(groups), inv_std(groups);
  for (int g = 0; g < groups; ++g) {
    size_t base = static_cast<size_t>(g) * gsz;
    double mu = 0.0;
    for (size_t i = 0; i < gsz; ++i) mu += xv[base + i];
    mu /= static_cast<double>(gsz);
    double var = 0.0;
    for (size_t i = 0; i < gsz; ++i) {
      double d = xv[base + i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(gsz);
    double is = 1.0 / std::sqrt(var + eps);
    means[g] = mu;
    inv_std[g] = is;
    for (size_t i = 0; i < gsz; ++i) out[base + i] = (xv[base + i] - mu) * is;
  }
  int id = t.add_node(
      std::move(out), {x.id},
      [x, groups, gsz, means = std::move(means), inv_std = std::move(inv_std)](Tape& t, int self) {
        const Tensor& g = t.grad_buf(self);
        const Tensor& xv = t.val(x.id);
        Tensor& gx = t.grad_buf(x.id);
        for (int grp = 0; grp < groups; ++grp) {
          size_t base = static_cast<size_t>(grp) * gsz;
          double is = inv_std[grp], mu = means[grp];
          double sum_d = 0.0, sum_dx = 0.0;
          for (size_t i = 0; i < gsz; ++i) {
            double xh = (xv[base + i] - mu) * is;
            sum_d += g[base + i];
            sum_dx += g[base + i] * xh;
          }
          double n = static_cast<double>(gsz);
          for (size_t i = 0; i < gsz; ++i) {
            double xh = (xv[base + i] - mu) * is;
            gx[base + i] += is * (g[base + i] - sum_d / n - xh * sum_dx / n);
          }
        }
      });
  return Var{&t, id};
}

// ---- channel / spatial broadcasts ----

namespace {
void require_chw(const Tensor& z, const char* op) {
  if (z.ndim() != 3) fail(std::string(op) + ": tensor is not C x H x W: " + z.shape_str());
}
}  // namespace

Var scale_channels(Var z, Var s) {
  Tape& t = *z.tape;
  const Tensor& zv = z.val();
  const Tensor& sv = s.val();
  require_chw(zv, "scale_channels");
  int c = zv.shape[0];
  size_t hw = static_cast<size_t>(zv.shape[1]) * zv.shape[2];
  if (sv.numel() != static_cast<size_t>(c))
    fail("scale_channels: scale shape " + sv.shape_str() + " does not match channels " +
         std::to_string(c));
  Tensor out = zv;
  for (int ch = 0; ch < c; ++ch)
    for (size_t i = 0; i < hw; ++i) out[ch * hw + i] *= sv[ch];
  int id = t.add_node(std::move(out), {z.id, s.id}, [z, s, hw](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& zv = t.val(z.id);
    const Tensor& sv = t.val(s.id);
    int c = zv.shape[0];
    if (t.needs_grad(z.id)) {
      Tensor& gz = t.grad_buf(z.id);
      for (int ch = 0; ch < c; ++ch)
        for (size_t i = 0; i < hw; ++i) gz[ch * hw + i] += g[ch * hw + i] * sv[ch];
    }
    if (t.needs_grad(s.id)) {
      Tensor& gs = t.grad_buf(s.id);
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (size_t i = 0; i < hw; ++i) acc += g[ch * hw + i] * zv[ch * hw + i];
        gs[ch] += acc;
      }
    }
  });
  return Var{&t, id};
}

Var shift_channels(Var z, Var b) {
  Tape& t = *z.tape;
  const Tensor& zv = z.val();
  const Tensor& bv = b.val();
  require_chw(zv, "shift_channels");
  int c = zv.shape[0];
  size_t hw = static_cast<size_t>(zv.shape[1]) * zv.shape[2];
  if (bv.numel() != static_cast<size_t>(c))
    fail("shift_channels: shift shape " + bv.shape_str() + " does not match channels " +
         std::to_string(c));
  Tensor out = zv;
  for (int ch = 0; ch < c; ++ch)
    for (size_t i = 0; i < hw; ++i) out[ch * hw + i] += bv[ch];
  int id = t.add_node(std::move(out), {z.id, b.id}, [z, b, hw](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    int c = t.val(z.id).shape[0];
    if (t.needs_grad(z.id)) {
      Tensor& gz = t.grad_buf(z.id);
      for (size_t i = 0; i < g.numel(); ++i) gz[i] += g[i];
    }
    if (t.needs_grad(b.id)) {
      Tensor& gb = t.grad_buf(b.id);
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (size_t i = 0; i < hw; ++i) acc += g[ch * hw + i];
        gb[ch] += acc;
      }
    }
  });
  return Var{&t, id};
}

Var mul_spatial(Var z, Var m) {
  Tape& t = *z.tape;
  const Tensor& zv = z.val();
  const Tensor& mv = m.val();
  require_chw(zv, "mul_spatial");
  size_t hw = static_cast<size_t>(zv.shape[1]) * zv.shape[2];
  if (mv.numel() != hw)
    fail("mul_spatial: mask shape " + mv.shape_str() + " does not match spatial size " +
         std::to_string(hw));
  int c = zv.shape[0];
  Tensor out = zv;
  for (int ch = 0; ch < c; ++ch)
    for (size_t i = 0; i < hw; ++i) out[ch * hw + i] *= mv[i];
  int id = t.add_node(std::move(out), {z.id, m.id}, [z, m, hw](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& zv = t.val(z.id);
    const Tensor& mv = t.val(m.id);
    int c = zv.shape[0];
    if (t.needs_grad(z.id)) {
      Tensor& gz = t.grad_buf(z.id);
      for (int ch = 0; ch < c; ++ch)
        for (size_t i = 0; i < hw; ++i) gz[ch * hw + i] += g[ch * hw + i] * mv[i];
    }
    if (t.needs_grad(m.id)) {
      Tensor& gm = t.grad_buf(m.id);
      for (int ch = 0; ch < c; ++ch)
        for (size_t i = 0; i < hw; ++i) gm[i] += g[ch * hw + i] * zv[ch * hw + i];
    }
  });
  return Var{&t, id};
}

Var scale_rows(Var x, Var r) {
  Tape& t = *x.tape;
  const Tensor& xv = x.val();
  const Tensor& rv = r.val();
  if (xv.ndim() != 2) fail("scale_rows: tensor is not 2-D: " + xv.shape_str());
  if (rv.numel() != static_cast<size_t>(xv.rows()))
    fail("scale_rows: row weights " + rv.shape_str() + " do not match " + xv.shape_str());
  int m = xv.rows(), n = xv.cols();
  Tensor out = xv;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at2(i, j) *= rv[i];
  int id = t.add_node(std::move(out), {x.id, r.id}, [x, r](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& xv = t.val(x.id);
    const Tensor& rv = t.val(r.id);
    int m = xv.rows(), n = xv.cols();
    if (t.needs_grad(x.id)) {
      Tensor& gx = t.grad_buf(x.id);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gx.at2(i, j) += g.at2(i, j) * rv[i];
    }
    if (t.needs_grad(r.id)) {
      Tensor& gr = t.grad_buf(r.id);
      for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += g.at2(i, j) * xv.at2(i, j);
        gr[i] += acc;
      }
    }
  });
  return Var{&t, id};
}

// ---- reductions / losses ----

Var sum_all(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  double s = 0.0;
  for (double v : av.data) s += v;
  int id = t.add_node(Tensor({1}, s), {a.id}, [a](Tape& t, int self) {
    double g = t.grad_buf(self)[0];
    Tensor& ga = t.grad_buf(a.id);
    for (size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
  return Var{&t, id};
}

Var mean_all(Var a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.val().numel()));
}

Var l2_norm(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = a.val();
  double acc = 0.0;
  for (double v : av.data) acc += v * v;
  double norm = std::sqrt(acc);
  int id = t.add_node(Tensor({1}, norm), {a.id}, [a, norm](Tape& t, int self) {
    if (norm == 0.0) return;  // subgradient 0 at the origin
    double g = t.grad_buf(self)[0];
    const Tensor& av = t.val(a.id);
    Tensor& ga = t.grad_buf(a.id);
    for (size_t i = 0; i < av.numel(); ++i) ga[i] += g * av[i] / norm;
  });
  return Var{&t, id};
}

Var sum_squares(Var a) { return sum_all(mul(a, a)); }

Var mse(Var a, Var b) { return sum_squares(sub(a, b)); }

Var smooth_l1(Var pred, Var target) {
  Var d = sub(pred, target);
  double v = d.val()[0];
  if (d.val().numel() != 1) fail("smooth_l1: expects scalar inputs");
  if (std::abs(v) < 1.0) return scale(mul(d, d), 0.5);
  // |d| - 0.5, with the sign picked from the current value
  if (v >= 0.0) return add_scalar(d, -0.5);
  return add_scalar(neg(d), -0.5);
}

Var hinge(Var s) {
  if (s.val().numel() != 1) fail("hinge: expects a scalar");
  if (s.val()[0] > 0.0) return s;
  return make_const_scalar(*s.tape, 0.0);
}

// ---- drivers ----

ForwardBackwardResult forward_backward(
    const std::vector<std::pair<std::string, Tensor>>& params,
    const std::function<Var(Tape&, std::map<std::string, Var>&)>& build) {
  Tape tape;
  std::map<std::string, Var> vars;
  for (const auto& [name, tensor] : params) vars[name] = make_leaf(tape, tensor);
  Var loss = build(tape, vars);
  if (loss.val().numel() != 1)
    fail("forward_backward: loss must be scalar, got " + loss.val().shape_str());
  tape.backward(loss.id);
  ForwardBackwardResult res;
  res.value = loss.val()[0];
  for (const auto& [name, tensor] : params)
    if (tensor.requires_grad) res.grads[name] = tape.grad(vars[name].id);
  return res;
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, double eps) {
  if (eps <= 0.0) fail("finite_difference_grad: eps must be positive");
  Tensor g(x.shape);
  Tensor probe = x;
  for (size_t i = 0; i < x.numel(); ++i) {
    double orig = probe[i];
    probe[i] = orig + eps;
    double fp = f(probe);
    probe[i] = orig - eps;
    double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      fail("finite_difference_grad: function returned non-finite value");
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

}  // namespace grpg

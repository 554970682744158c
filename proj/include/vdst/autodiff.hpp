#pragma once

// Define-by-run reverse-mode differentiation over dense Tensors.
//
// A Tape records every operation in execution order, so the node list is
// already topologically sorted: backward() walks it once in reverse.
// Parameters enter a tape through Tape::param(); their gradients are written
// straight into Tensor::grad so several tapes (games) can accumulate into one
// parameter set before an optimizer step.

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vdst/tensor.hpp"

namespace vdst::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return tape != nullptr; }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  // With grad disabled nothing is retained for backward; used for pure inference.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor t) {
    Node n;
    n.owned = std::move(t);
    return push(std::move(n));
  }

  // A differentiable input owned by the tape; read its gradient with grad().
  Var leaf(Tensor t) {
    Node n;
    n.owned = std::move(t);
    n.is_leaf = true;
    n.needs_grad = grad_enabled_;
    if (n.needs_grad) n.grad_store.assign(n.owned.size(), 0.0);
    return push(std::move(n));
  }

  // Registers (once per tape) an external trainable tensor. The tensor must
  // outlive the tape and must not be resized while the tape is alive.
  Var param(Tensor& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var{this, it->second};
    Node n;
    n.external = &p;
    n.is_leaf = true;
    n.needs_grad = grad_enabled_ && p.requires_grad;
    if (n.needs_grad) {
      if (p.grad.size() != p.size()) p.grad.assign(p.size(), 0.0);
      n.external_grad = p.grad.data();
    }
    Var v = push(std::move(n));
    param_ids_.emplace(&p, v.id);
    return v;
  }

  // Read-only external tensor (inference, or frozen weights).
  Var param(const Tensor& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var{this, it->second};
    Node n;
    n.external = &p;
    n.is_leaf = true;
    Var v = push(std::move(n));
    param_ids_.emplace(&p, v.id);
    return v;
  }

  const Tensor& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.owned;
  }

  // Gradient of a leaf (or any node after backward); empty span if untracked.
  std::span<const double> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.external_grad) return {n.external_grad, value(v).size()};
    return n.grad_store;
  }

  void backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: variable belongs to another tape");
    const Tensor& lv = value(loss);
    if (lv.size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(lv.shape()));
    if (!nodes_[loss.id].needs_grad) return;
    for (auto& n : nodes_)
      if (!n.is_leaf) n.grad_store.clear();
    grad_for(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad_store.empty()) n.backward(*this, i);
    }
  }

  // --- op-author interface -------------------------------------------------

  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var record(Tensor value, std::span<const Var> inputs, Backward fn) {
    Node n;
    n.owned = std::move(value);
    if (grad_enabled_) {
      for (const Var& in : inputs) {
        if (in.tape != this) throw std::invalid_argument("operation mixes variables from different tapes");
        n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
      }
      if (n.needs_grad) n.backward = std::move(fn);
    }
    return push(std::move(n));
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  const double* node_grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.external_grad) return n.external_grad;
    return n.grad_store.empty() ? nullptr : n.grad_store.data();
  }

  // Zero-initialised on first touch; nullptr when the node is not differentiable.
  double* grad_for(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    if (n.external_grad) return n.external_grad;
    if (n.grad_store.empty()) n.grad_store.assign(value(Var{this, id}).size(), 0.0);
    return n.grad_store.data();
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    double* external_grad = nullptr;
    std::vector<double> grad_store;
    Backward backward;
    bool needs_grad = false;
    bool is_leaf = false;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> param_ids_;
};

namespace detail {

inline const Tensor& val(Var v) { return v.tape->value(v); }

inline void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("operation mixes variables from different tapes");
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void require_rank(const char* op, const Tensor& t, std::size_t r) {
  if (t.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(t.shape()));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename F, typename D>
Var unary(Var a, F f, D df) {
  const Tensor& x = val(a);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape->record(std::move(out), {a}, [a, df](Tape& t, std::size_t self) {
    double* ga = t.grad_for(a.id);
    if (!ga) return;
    const double* g = t.node_grad(self);
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(Var{&t, self});
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace detail

// --- linear algebra ----------------------------------------------------------

// (p x q)(q x r) -> p x r. A rank-1 left operand is treated as a 1 x q row and
// yields a rank-1 result of length r.
inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  const Tensor& A = detail::val(a);
  const Tensor& B = detail::val(b);
  if (B.rank() != 2 || (A.rank() != 1 && A.rank() != 2))
    throw ShapeError("matmul: unsupported ranks " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  const std::size_t p = A.rank() == 2 ? A.shape()[0] : 1;
  const std::size_t q = A.shape().back();
  const std::size_t r = B.shape()[1];
  if (B.shape()[0] != q)
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor out(A.rank() == 2 ? Shape{p, r} : Shape{r});
  MatMap(out.data().data(), p, r).noalias() = CMatMap(A.data().data(), p, q) * CMatMap(B.data().data(), q, r);
  return a.tape->record(std::move(out), {a, b}, [a, b, p, q, r](Tape& t, std::size_t self) {
    CMatMap G(t.node_grad(self), p, r);
    if (double* ga = t.grad_for(a.id))
      MatMap(ga, p, q).noalias() += G * CMatMap(t.value(b).data().data(), q, r).transpose();
    if (double* gb = t.grad_for(b.id))
      MatMap(gb, q, r).noalias() += CMatMap(t.value(a).data().data(), p, q).transpose() * G;
  });
}

// W x (+ bias): W is out x in, x has length in.
inline Var linear(Var w, Var x, Var bias = {}) {
  detail::same_tape(w, x);
  const Tensor& W = detail::val(w);
  const Tensor& X = detail::val(x);
  detail::require_rank("linear", W, 2);
  const std::size_t o = W.shape()[0], n = W.shape()[1];
  if (X.size() != n)
    throw ShapeError("linear: weight " + shape_str(W.shape()) + " vs input " + shape_str(X.shape()));
  Tensor out(Shape{o});
  VecMap y(out.data().data(), o);
  y.noalias() = CMatMap(W.data().data(), o, n) * CVecMap(X.data().data(), n);
  const bool has_bias = bias.valid();
  if (has_bias) {
    detail::same_tape(w, bias);
    const Tensor& B = detail::val(bias);
    if (B.size() != o) throw ShapeError("linear: bias " + shape_str(B.shape()) + " vs output " + std::to_string(o));
    y += CVecMap(B.data().data(), o);
  }
  auto bw = [w, x, bias, has_bias, o, n](Tape& t, std::size_t self) {
    CVecMap g(t.node_grad(self), o);
    if (double* gw = t.grad_for(w.id))
      MatMap(gw, o, n).noalias() += g * CVecMap(t.value(x).data().data(), n).transpose();
    if (double* gx = t.grad_for(x.id))
      VecMap(gx, n).noalias() += CMatMap(t.value(w).data().data(), o, n).transpose() * g;
    if (has_bias)
      if (double* gb = t.grad_for(bias.id)) VecMap(gb, o) += g;
  };
  if (has_bias) return w.tape->record(std::move(out), {w, x, bias}, bw);
  return w.tape->record(std::move(out), {w, x}, bw);
}

inline Var transpose(Var a) {
  const Tensor& A = detail::val(a);
  detail::require_rank("transpose", A, 2);
  const std::size_t r = A.shape()[0], c = A.shape()[1];
  Tensor out(Shape{c, r});
  MatMap(out.data().data(), c, r) = CMatMap(A.data().data(), r, c).transpose();
  return a.tape->record(std::move(out), {a}, [a, r, c](Tape& t, std::size_t self) {
    if (double* ga = t.grad_for(a.id)) MatMap(ga, r, c) += CMatMap(t.node_grad(self), c, r).transpose();
  });
}

inline Var reshape(Var a, Shape shape) {
  const Tensor& A = detail::val(a);
  if (shape_size(shape) != A.size())
    throw ShapeError("reshape: " + shape_str(A.shape()) + " -> " + shape_str(shape));
  Tensor out(std::move(shape), A.values());
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    double* ga = t.grad_for(a.id);
    if (!ga) return;
    const double* g = t.node_grad(self);
    for (std::size_t i = 0, n = t.value(a).size(); i < n; ++i) ga[i] += g[i];
  });
}

// --- elementwise ---------------------------------------------------------------

enum class Elementwise { add, sub, mul };

inline Var elementwise(Var a, Var b, Elementwise op) {
  detail::same_tape(a, b);
  const Tensor& A = detail::val(a);
  const Tensor& B = detail::val(b);
  detail::require_same_shape("elementwise", A, B);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) {
    switch (op) {
      case Elementwise::add: out[i] = A[i] + B[i]; break;
      case Elementwise::sub: out[i] = A[i] - B[i]; break;
      case Elementwise::mul: out[i] = A[i] * B[i]; break;
    }
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, op](Tape& t, std::size_t self) {
    const double* g = t.node_grad(self);
    const std::size_t n = t.value(a).size();
    double* ga = t.grad_for(a.id);
    double* gb = t.grad_for(b.id);
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    for (std::size_t i = 0; i < n; ++i) {
      switch (op) {
        case Elementwise::add:
          if (ga) ga[i] += g[i];
          if (gb) gb[i] += g[i];
          break;
        case Elementwise::sub:
          if (ga) ga[i] += g[i];
          if (gb) gb[i] -= g[i];
          break;
        case Elementwise::mul:
          if (ga) ga[i] += g[i] * B[i];
          if (gb) gb[i] += g[i] * A[i];
          break;
      }
    }
  });
}

inline Var add(Var a, Var b) { return elementwise(a, b, Elementwise::add); }
inline Var sub(Var a, Var b) { return elementwise(a, b, Elementwise::sub); }
inline Var mul(Var a, Var b) { return elementwise(a, b, Elementwise::mul); }

// Row-wise broadcast of a length-d vector over an m x d matrix: out[i][j] = M[i][j] * v[j].
inline Var mul_rowwise(Var m, Var v) {
  detail::same_tape(m, v);
  const Tensor& M = detail::val(m);
  const Tensor& V = detail::val(v);
  detail::require_rank("mul_rowwise", M, 2);
  const std::size_t rows = M.shape()[0], cols = M.shape()[1];
  if (V.size() != cols)
    throw ShapeError("mul_rowwise: matrix " + shape_str(M.shape()) + " vs vector " + shape_str(V.shape()));
  Tensor out(M.shape());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = M(i, j) * V[j];
  return m.tape->record(std::move(out), {m, v}, [m, v, rows, cols](Tape& t, std::size_t self) {
    const double* g = t.node_grad(self);
    const Tensor& M = t.value(m);
    const Tensor& V = t.value(v);
    double* gm = t.grad_for(m.id);
    double* gv = t.grad_for(v.id);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const double gij = g[i * cols + j];
        if (gm) gm[i * cols + j] += gij * V[j];
        if (gv) gv[j] += gij * M(i, j);
      }
  });
}

// out[i][j] = M[i][j] + v[j].
inline Var add_rowwise(Var m, Var v) {
  detail::same_tape(m, v);
  const Tensor& M = detail::val(m);
  const Tensor& V = detail::val(v);
  detail::require_rank("add_rowwise", M, 2);
  const std::size_t rows = M.shape()[0], cols = M.shape()[1];
  if (V.size() != cols)
    throw ShapeError("add_rowwise: matrix " + shape_str(M.shape()) + " vs vector " + shape_str(V.shape()));
  Tensor out(M.shape());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = M(i, j) + V[j];
  return m.tape->record(std::move(out), {m, v}, [m, v, rows, cols](Tape& t, std::size_t self) {
    const double* g = t.node_grad(self);
    double* gm = t.grad_for(m.id);
    double* gv = t.grad_for(v.id);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        if (gm) gm[i * cols + j] += g[i * cols + j];
        if (gv) gv[j] += g[i * cols + j];
      }
  });
}

// out[i][j] = s[i] * M[i][j]; each row scaled by its own weight.
inline Var scale_rows(Var m, Var s) {
  detail::same_tape(m, s);
  const Tensor& M = detail::val(m);
  const Tensor& S = detail::val(s);
  detail::require_rank("scale_rows", M, 2);
  const std::size_t rows = M.shape()[0], cols = M.shape()[1];
  if (S.size() != rows)
    throw ShapeError("scale_rows: matrix " + shape_str(M.shape()) + " vs weights " + shape_str(S.shape()));
  Tensor out(M.shape());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = S[i] * M(i, j);
  return m.tape->record(std::move(out), {m, s}, [m, s, rows, cols](Tape& t, std::size_t self) {
    const double* g = t.node_grad(self);
    const Tensor& M = t.value(m);
    const Tensor& S = t.value(s);
    double* gm = t.grad_for(m.id);
    double* gs = t.grad_for(s.id);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const double gij = g[i * cols + j];
        if (gm) gm[i * cols + j] += gij * S[i];
        if (gs) gs[i] += gij * M(i, j);
      }
  });
}

inline Var scale(Var a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_constant(Var a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// --- activations ----------------------------------------------------------------

enum class Activation { tanh, sigmoid, swish };

inline Var activation(Var a, Activation kind) {
  switch (kind) {
    case Activation::tanh:
      return detail::unary(a, [](double x) { return std::tanh(x); },
                           [](double, double y) { return 1.0 - y * y; });
    case Activation::sigmoid:
      return detail::unary(a, [](double x) { return detail::sigmoid(x); },
                           [](double, double y) { return y * (1.0 - y); });
    case Activation::swish:
      return detail::unary(a, [](double x) { return x * detail::sigmoid(x); },
                           [](double x, double y) {
                             const double s = detail::sigmoid(x);
                             return s + y * (1.0 - s);
                           });
  }
  throw std::invalid_argument("unknown activation");
}

inline Var tanh(Var a) { return activation(a, Activation::tanh); }
inline Var sigmoid(Var a) { return activation(a, Activation::sigmoid); }
inline Var swish(Var a) { return activation(a, Activation::swish); }

inline Var log(Var a) {
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// Entries below lo are replaced by lo and pass no gradient.
inline Var clamp_min(Var a, double lo) {
  return detail::unary(a, [lo](double x) { return x < lo ? lo : x; },
                       [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

// --- reductions and softmax -------------------------------------------------------

inline Var sum(Var a) {
  const Tensor& A = detail::val(a);
  double s = 0;
  for (double x : A.data()) s += x;
  return a.tape->record(Tensor::scalar(s), {a}, [a](Tape& t, std::size_t self) {
    double* ga = t.grad_for(a.id);
    if (!ga) return;
    const double g = t.node_grad(self)[0];
    for (std::size_t i = 0, n = t.value(a).size(); i < n; ++i) ga[i] += g;
  });
}

inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

// m x d -> m, summing each row.
inline Var row_sum(Var a) {
  const Tensor& A = detail::val(a);
  detail::require_rank("row_sum", A, 2);
  const std::size_t rows = A.shape()[0], cols = A.shape()[1];
  Tensor out(Shape{rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i] += A(i, j);
  return a.tape->record(std::move(out), {a}, [a, rows, cols](Tape& t, std::size_t self) {
    double* ga = t.grad_for(a.id);
    if (!ga) return;
    const double* g = t.node_grad(self);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += g[i];
  });
}

// Stable softmax. Rank 1: over the whole vector. Rank 2: axis 0 normalises each
// column over the rows, axis 1 normalises each row.
inline Var softmax(Var a, int axis = 0) {
  const Tensor& A = detail::val(a);
  if (A.rank() == 0 || A.rank() > 2) throw ShapeError("softmax: unsupported shape " + shape_str(A.shape()));
  if (axis < 0 || static_cast<std::size_t>(axis) >= A.rank())
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(A.shape()));
  const std::size_t rows = A.rank() == 2 ? A.shape()[0] : A.size();
  const std::size_t cols = A.rank() == 2 ? A.shape()[1] : 1;
  // Slice k has `len` entries spaced `stride` apart starting at start(k).
  const bool over_rows = axis == 0;
  const std::size_t slices = over_rows ? cols : rows;
  const std::size_t len = over_rows ? rows : cols;
  const std::size_t stride = over_rows ? cols : 1;
  auto start = [=](std::size_t k) { return over_rows ? k : k * cols; };
  Tensor out(A.shape());
  for (std::size_t k = 0; k < slices; ++k) {
    const std::size_t s0 = start(k);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, A[s0 + i * stride]);
    double z = 0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(A[s0 + i * stride] - mx);
      out[s0 + i * stride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[s0 + i * stride] /= z;
  }
  return a.tape->record(std::move(out), {a}, [a, slices, len, stride, start](Tape& t, std::size_t self) {
    double* ga = t.grad_for(a.id);
    if (!ga) return;
    const double* g = t.node_grad(self);
    const Tensor& y = t.value(Var{&t, self});
    for (std::size_t k = 0; k < slices; ++k) {
      const std::size_t s0 = start(k);
      double inner = 0;
      for (std::size_t i = 0; i < len; ++i) inner += g[s0 + i * stride] * y[s0 + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t idx = s0 + i * stride;
        ga[idx] += y[idx] * (g[idx] - inner);
      }
    }
  });
}

inline Var log_softmax(Var a) {
  const Tensor& A = detail::val(a);
  detail::require_rank("log_softmax", A, 1);
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : A.data()) mx = std::max(mx, x);
  double z = 0;
  for (double x : A.data()) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] - lse;
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    double* ga = t.grad_for(a.id);
    if (!ga) return;
    const double* g = t.node_grad(self);
    const Tensor& y = t.value(Var{&t, self});
    double gs = 0;
    for (std::size_t i = 0; i < y.size(); ++i) gs += g[i];
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] - std::exp(y[i]) * gs;
  });
}

// -log softmax(logits)[target] as a scalar.
inline Var cross_entropy(Var logits, std::size_t target) {
  const Tensor& L = detail::val(logits);
  detail::require_rank("cross_entropy", L, 1);
  if (target >= L.size())
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside " +
                            std::to_string(L.size()) + " classes");
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : L.data()) mx = std::max(mx, x);
  double z = 0;
  for (double x : L.data()) z += std::exp(x - mx);
  const double loss = mx + std::log(z) - L[target];
  return logits.tape->record(Tensor::scalar(loss), {logits}, [logits, target, mx, z](Tape& t, std::size_t self) {
    double* gl = t.grad_for(logits.id);
    if (!gl) return;
    const double g = t.node_grad(self)[0];
    const Tensor& L = t.value(logits);
    for (std::size_t i = 0; i < L.size(); ++i) gl[i] += g * std::exp(L[i] - mx) / z;
    gl[target] -= g;
  });
}

// x / sum(x). The sum must exceed min_total.
inline Var normalize(Var a, double min_total = 1e-30) {
  const Tensor& A = detail::val(a);
  double s = 0;
  for (double x : A.data()) s += x;
  if (!(s >= min_total)) throw std::domain_error("normalize: total mass " + std::to_string(s) + " is degenerate");
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] / s;
  return a.tape->record(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
    double* ga = t.grad_for(a.id);
    if (!ga) return;
    const double* g = t.node_grad(self);
    const Tensor& y = t.value(Var{&t, self});
    double inner = 0;
    for (std::size_t i = 0; i < y.size(); ++i) inner += g[i] * y[i];
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += (g[i] - inner) / s;
  });
}

// --- structural ---------------------------------------------------------------------

// Flattens and concatenates into a rank-1 tensor.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape* tape = parts.front().tape;
  std::vector<double> data;
  for (const Var& p : parts) {
    detail::same_tape(parts.front(), p);
    const Tensor& P = detail::val(p);
    data.insert(data.end(), P.data().begin(), P.data().end());
  }
  Tensor out = Tensor::vector(std::move(data));
  return tape->record(std::move(out), std::span<const Var>(parts), [parts](Tape& t, std::size_t self) {
    const double* g = t.node_grad(self);
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t n = t.value(p).size();
      if (double* gp = t.grad_for(p.id))
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      off += n;
    }
  });
}

inline Var slice(Var a, std::size_t start, std::size_t len) {
  const Tensor& A = detail::val(a);
  if (start + len > A.size())
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + len) + ") outside " +
                     shape_str(A.shape()));
  std::vector<double> d(A.data().begin() + static_cast<std::ptrdiff_t>(start),
                        A.data().begin() + static_cast<std::ptrdiff_t>(start + len));
  return a.tape->record(Tensor::vector(std::move(d)), {a}, [a, start, len](Tape& t, std::size_t self) {
    double* ga = t.grad_for(a.id);
    if (!ga) return;
    const double* g = t.node_grad(self);
    for (std::size_t i = 0; i < len; ++i) ga[start + i] += g[i];
  });
}

// Row `index` of a V x d table.
inline Var embedding(Var table, std::size_t index) {
  const Tensor& T = detail::val(table);
  detail::require_rank("embedding", T, 2);
  if (index >= T.shape()[0])
    throw std::out_of_range("embedding: index " + std::to_string(index) + " outside table of " +
                            std::to_string(T.shape()[0]) + " rows");
  const std::size_t d = T.shape()[1];
  std::vector<double> row(T.data().begin() + static_cast<std::ptrdiff_t>(index * d),
                          T.data().begin() + static_cast<std::ptrdiff_t>((index + 1) * d));
  return table.tape->record(Tensor::vector(std::move(row)), {table}, [table, index, d](Tape& t, std::size_t self) {
    double* gt = t.grad_for(table.id);
    if (!gt) return;
    const double* g = t.node_grad(self);
    for (std::size_t j = 0; j < d; ++j) gt[index * d + j] += g[j];
  });
}

// Mean of the rows whose mask entry is non-zero; m x d -> d.
inline Var masked_mean_rows(Var a, const std::vector<double>& mask) {
  const Tensor& A = detail::val(a);
  detail::require_rank("masked_mean_rows", A, 2);
  const std::size_t rows = A.shape()[0], cols = A.shape()[1];
  if (mask.size() != rows) throw ShapeError("masked_mean_rows: mask length mismatch");
  double count = 0;
  for (double w : mask) count += (w != 0.0);
  if (count == 0) throw std::domain_error("masked_mean_rows: no rows selected");
  Tensor out(Shape{cols});
  for (std::size_t i = 0; i < rows; ++i)
    if (mask[i] != 0.0)
      for (std::size_t j = 0; j < cols; ++j) out[j] += A(i, j) / count;
  return a.tape->record(std::move(out), {a}, [a, mask, rows, cols, count](Tape& t, std::size_t self) {
    double* ga = t.grad_for(a.id);
    if (!ga) return;
    const double* g = t.node_grad(self);
    for (std::size_t i = 0; i < rows; ++i)
      if (mask[i] != 0.0)
        for (std::size_t j = 0; j < cols; ++j) ga[i * cols + j] += g[j] / count;
  });
}

// Pairwise object-self differences. For O (m x d) produces m x (m*d) where row i
// is the concatenation over k of o_i * (o_i - o_k).
inline Var self_difference(Var o) {
  const Tensor& O = detail::val(o);
  detail::require_rank("self_difference", O, 2);
  const std::size_t m = O.shape()[0], d = O.shape()[1];
  Tensor out(Shape{m, m * d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t j = 0; j < d; ++j) out(i, k * d + j) = O(i, j) * (O(i, j) - O(k, j));
  return o.tape->record(std::move(out), {o}, [o, m, d](Tape& t, std::size_t self) {
    double* go = t.grad_for(o.id);
    if (!go) return;
    const double* g = t.node_grad(self);
    const Tensor& O = t.value(o);
    const std::size_t w = m * d;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < m; ++k)
        for (std::size_t j = 0; j < d; ++j) {
          const double gik = g[i * w + k * d + j];
          // d/d o_i: (2 o_i - o_k), d/d o_k: -o_i
          go[i * d + j] += gik * (2.0 * O(i, j) - O(k, j));
          go[k * d + j] -= gik * O(i, j);
        }
  });
}

// --- recurrent cell ---------------------------------------------------------------

struct LstmState {
  Var h;
  Var c;
};

// One LSTM step with gate order (input, forget, candidate, output):
//   z = Wx x + Wh h + b,  c' = f*c + i*g,  h' = o*tanh(c').
// `bias` may be any 4H vector on the tape, which lets callers fold
// step-invariant input contributions into it.
inline LstmState lstm_cell(Var x, Var h, Var c, Var wx, Var wh, Var bias) {
  Tape* tape = x.tape;
  for (Var v : {h, c, wx, wh, bias}) detail::same_tape(x, v);
  const Tensor& X = detail::val(x);
  const Tensor& H = detail::val(h);
  const Tensor& C = detail::val(c);
  const Tensor& Wx = detail::val(wx);
  const Tensor& Wh = detail::val(wh);
  const Tensor& B = detail::val(bias);
  const std::size_t nh = H.size(), nx = X.size();
  if (C.size() != nh || Wx.rank() != 2 || Wh.rank() != 2 || Wx.shape()[0] != 4 * nh || Wx.shape()[1] != nx ||
      Wh.shape()[0] != 4 * nh || Wh.shape()[1] != nh || B.size() != 4 * nh)
    throw ShapeError("lstm_cell: inconsistent shapes x" + shape_str(X.shape()) + " h" + shape_str(H.shape()) +
                     " c" + shape_str(C.shape()) + " Wx" + shape_str(Wx.shape()) + " Wh" + shape_str(Wh.shape()) +
                     " b" + shape_str(B.shape()));
  // Node layout: [h' (nh) | c' (nh) | gates i,f,g,o (4nh) | tanh(c') (nh)]
  Tensor out(Shape{7 * nh});
  double* o = out.data().data();
  VecMap z(o + 2 * nh, 4 * nh);
  z.noalias() = CMatMap(Wx.data().data(), 4 * nh, nx) * CVecMap(X.data().data(), nx);
  z.noalias() += CMatMap(Wh.data().data(), 4 * nh, nh) * CVecMap(H.data().data(), nh);
  z += CVecMap(B.data().data(), 4 * nh);
  double* gi = o + 2 * nh;
  double* gf = gi + nh;
  double* gg = gf + nh;
  double* go = gg + nh;
  double* tc = go + nh;
  for (std::size_t k = 0; k < nh; ++k) {
    gi[k] = detail::sigmoid(gi[k]);
    gf[k] = detail::sigmoid(gf[k]);
    gg[k] = std::tanh(gg[k]);
    go[k] = detail::sigmoid(go[k]);
    const double cn = gf[k] * C[k] + gi[k] * gg[k];
    o[nh + k] = cn;
    tc[k] = std::tanh(cn);
    o[k] = go[k] * tc[k];
  }
  Var node = tape->record(std::move(out), {x, h, c, wx, wh, bias},
                          [x, h, c, wx, wh, bias, nh, nx](Tape& t, std::size_t self) {
    const double* g = t.node_grad(self);
    const double* s = t.value(Var{&t, self}).data().data();
    const double* i = s + 2 * nh;
    const double* f = i + nh;
    const double* gg = f + nh;
    const double* o = gg + nh;
    const double* tc = o + nh;
    const Tensor& C = t.value(c);
    std::vector<double> dz(4 * nh);
    std::vector<double> dc_prev(nh);
    for (std::size_t k = 0; k < nh; ++k) {
      const double dh = g[k];
      const double dc = g[nh + k] + dh * o[k] * (1.0 - tc[k] * tc[k]);
      dz[k] = dc * gg[k] * i[k] * (1.0 - i[k]);
      dz[nh + k] = dc * C[k] * f[k] * (1.0 - f[k]);
      dz[2 * nh + k] = dc * i[k] * (1.0 - gg[k] * gg[k]);
      dz[3 * nh + k] = dh * tc[k] * o[k] * (1.0 - o[k]);
      dc_prev[k] = dc * f[k];
    }
    CVecMap DZ(dz.data(), 4 * nh);
    if (double* gb = t.grad_for(bias.id)) VecMap(gb, 4 * nh) += DZ;
    if (double* gwx = t.grad_for(wx.id))
      MatMap(gwx, 4 * nh, nx).noalias() += DZ * CVecMap(t.value(x).data().data(), nx).transpose();
    if (double* gwh = t.grad_for(wh.id))
      MatMap(gwh, 4 * nh, nh).noalias() += DZ * CVecMap(t.value(h).data().data(), nh).transpose();
    if (double* gx = t.grad_for(x.id))
      VecMap(gx, nx).noalias() += CMatMap(t.value(wx).data().data(), 4 * nh, nx).transpose() * DZ;
    if (double* gh = t.grad_for(h.id))
      VecMap(gh, nh).noalias() += CMatMap(t.value(wh).data().data(), 4 * nh, nh).transpose() * DZ;
    if (double* gc = t.grad_for(c.id))
      for (std::size_t k = 0; k < nh; ++k) gc[k] += dc_prev[k];
  });
  return LstmState{slice(node, 0, nh), slice(node, nh, nh)};
}

}  // namespace vdst::ad

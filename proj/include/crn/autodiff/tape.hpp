#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crn/autodiff/parameter.hpp"
#include "crn/autodiff/tensor.hpp"

namespace crn::ad {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  inline const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
/// node vector is already a topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Tape() = default;
  /// With track_params = false, parameters enter as constants and nothing
  /// records a backward closure (inference).
  explicit Tape(bool track_params) : track_params_(track_params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false); }

  /// Leaf that receives a gradient readable through grad().
  Var variable(Tensor value) { return push(std::move(value), true); }

  /// Leaf bound to a parameter; backward() adds its gradient into param.grad.
  Var param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(p.value, track_params_);
    nodes_[v.id()].param = &p;
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  /// Read-only parameter access, allowed only on an inference tape.
  Var param(const Parameter& p) {
    if (track_params_) throw Error("param: const parameter '" + p.name + "' on a training tape");
    return push(p.value, false);
  }

  /// Appends a derived node. `backward` is dropped when no parent needs gradients.
  Var record(const char* op, Tensor value, std::initializer_list<Var> parents,
             BackwardFn backward) {
    return record(op, std::move(value), std::vector<Var>(parents), std::move(backward));
  }

  Var record(const char* op, Tensor value, const std::vector<Var>& parents,
             BackwardFn backward) {
#ifndef NDEBUG
    if (!value.all_finite()) {
      bool inputs_finite = true;
      for (const Var& p : parents) inputs_finite = inputs_finite && p.value().all_finite();
      if (inputs_finite) {
        throw NumericalError(std::string(op) + ": non-finite output from finite inputs");
      }
    }
#else
    (void)op;
#endif
    bool needs = false;
    for (const Var& p : parents) {
      if (&p.tape() != this) throw Error(std::string(op) + ": operand from another tape");
      needs = needs || nodes_[p.id()].requires_grad;
    }
    Var v = push(std::move(value), needs);
    if (needs) nodes_[v.id()].backward = std::move(backward);
    return v;
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward() target w.r.t. node `v`; zeros if unreached.
  const Tensor& grad(Var v) { return grad_ref(v.id()); }

  /// Incoming gradient buffer of node `id` (allocated lazily).
  Tensor& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.numel() != n.value.numel()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }

  /// Runs reverse accumulation from a scalar loss. Parameter gradients are
  /// added to Parameter::grad (callers zero them between steps).
  void backward(Var loss) {
    if (!loss.valid() || &loss.tape() != this || loss.id() >= nodes_.size()) {
      throw Error("backward: loss is not recorded on this tape");
    }
    if (!loss.value().is_scalar()) {
      throw ShapeError("backward: loss must be a scalar, got shape " +
                       shape_str(loss.value().shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    grad_ref(loss.id()).fill(1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.numel() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        auto& dst = n.param->grad.data();
        const auto& src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  Var push(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool track_params_ = true;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

template <typename Fwd, typename Deriv>
Var unary(const char* op, const Var& a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = fwd(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(op, std::move(y), {a}, [ia, deriv](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Tensor& g = t.grad_of(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: shapes " + shape_str(av.shape()) + " and " +
                     shape_str(bv.shape()) + " do not conform");
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor c = matmul_values(av, bv);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(c), {a, b},
                         [ia, ib, m, k, n](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           if (t.requires_grad(ia)) {
                             kernel::gemm_nt_acc(g.data().data(), t.value(ib).data().data(),
                                                 t.grad_ref(ia).data().data(), m, n, k);
                           }
                           if (t.requires_grad(ib)) {
                             kernel::gemm_tn_acc(t.value(ia).data().data(), g.data().data(),
                                                 t.grad_ref(ib).data().data(), m, k, n);
                           }
                         });
}

/// a + b, where b has a's shape or is a single row broadcast over a's rows.
inline Var add(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool same = av.shape() == bv.shape();
  const bool row_bcast = !same && av.rank() == 2 && bv.rows() == 1 && bv.cols() == av.cols() &&
                         bv.numel() == av.cols();
  if (!same && !row_bcast) {
    throw ShapeError("add: shapes " + shape_str(av.shape()) + " and " +
                     shape_str(bv.shape()) + " do not conform");
  }
  Tensor y = av;
  const std::size_t cols = av.cols();
  if (same) {
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += bv[i];
  } else {
    double* yp = y.data().data();
    const double* bp = bv.data().data();
    for (std::size_t r = 0, rows = y.numel() / cols; r < rows; ++r, yp += cols)
      for (std::size_t j = 0; j < cols; ++j) yp[j] += bp[j];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(y), {a, b},
                         [ia, ib, same, cols](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           if (t.requires_grad(ia)) {
                             Tensor& ga = t.grad_ref(ia);
                             for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                           }
                           if (t.requires_grad(ib)) {
                             Tensor& gb = t.grad_ref(ib);
                             if (same) {
                               for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
                             } else {
                               const double* gp = g.data().data();
                               double* bp = gb.data().data();
                               for (std::size_t r = 0, rows = g.numel() / cols; r < rows; ++r, gp += cols)
                                 for (std::size_t j = 0; j < cols; ++j) bp[j] += gp[j];
                             }
                           }
                         });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape("sub", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_ref(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_ref(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape("mul", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(y), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_ref(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_ref(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// Elementwise product with a constant tensor (masks, dropout).
inline Var mul(const Var& a, const Tensor& c) {
  if (a.shape() != c.shape()) {
    throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(c.shape()) +
                     " differ");
  }
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= c[i];
  const std::size_t ia = a.id();
  return a.tape().record("mul", std::move(y), {a}, [ia, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * c[i];
  });
}

/// alpha * a + beta, elementwise.
inline Var affine(const Var& a, double alpha, double beta) {
  Tensor y = a.value();
  for (double& v : y.data()) v = alpha * v + beta;
  const std::size_t ia = a.id();
  return a.tape().record("affine", std::move(y), {a}, [ia, alpha](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += alpha * g[i];
  });
}

inline Var scale(const Var& a, double s) { return affine(a, s, 0.0); }

/// Column-wise concatenation of matrices with equal row counts.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.rows() != rows) {
      throw ShapeError("concat: shapes " + shape_str(parts.front().shape()) + " and " +
                       shape_str(p.shape()) + " do not conform");
    }
    cols += p.cols();
  }
  Tensor y = Tensor::matrix(rows, cols);
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) y(r, off + c) = v(r, c);
    offsets.push_back(off);
    widths.push_back(w);
    ids.push_back(p.id());
    off += w;
  }
  return parts.front().tape().record(
      "concat", std::move(y), parts,
      [ids, offsets, widths, rows, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad_of(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor& gp = t.grad_ref(ids[k]);
          const std::size_t w = widths[k];
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * cols + offsets[k] + c];
        }
      });
}

/// Row-wise concatenation of matrices with equal column counts.
inline Var stack_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("stack_rows: no operands");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.cols() != cols) {
      throw ShapeError("stack_rows: shapes " + shape_str(parts.front().shape()) + " and " +
                       shape_str(p.shape()) + " do not conform");
    }
    rows += p.rows();
  }
  Tensor y = Tensor::matrix(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto& src = p.value().data();
    std::copy(src.begin(), src.end(), y.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += src.size();
    ids.push_back(p.id());
  }
  return parts.front().tape().record("stack_rows", std::move(y), parts,
                                     [ids](Tape& t, std::size_t self) {
                                       const Tensor& g = t.grad_of(self);
                                       std::size_t off = 0;
                                       for (std::size_t id : ids) {
                                         const std::size_t n = t.value(id).numel();
                                         if (t.requires_grad(id)) {
                                           Tensor& gp = t.grad_ref(id);
                                           for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
                                         }
                                         off += n;
                                       }
                                     });
}

/// Columns [begin, end) of a matrix.
inline Var slice(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || begin >= end || end > x.cols()) {
    throw ShapeError("slice: columns [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for shape " + shape_str(x.shape()));
  }
  const std::size_t rows = x.rows(), cols = x.cols(), w = end - begin;
  Tensor y = Tensor::matrix(rows, w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) y(r, c) = x(r, begin + c);
  const std::size_t ia = a.id();
  return a.tape().record("slice", std::move(y), {a},
                         [ia, rows, cols, w, begin](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor& ga = t.grad_ref(ia);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < w; ++c)
                               ga[r * cols + begin + c] += g[r * w + c];
                         });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      "sigmoid", a, [](double x) { return detail::sigmoid_scalar(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

/// Exponential linear unit with alpha = 1.
inline Var elu(const Var& a) {
  return detail::unary(
      "elu", a, [](double x) { return x > 0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

inline Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0)) throw NumericalError("log: non-positive operand " + std::to_string(v));
  }
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var square(const Var& a) {
  return detail::unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// Row-wise softmax of a matrix.
inline Var softmax(const Var& a) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[r * cols + c] = std::exp(x[r * cols + c] - mx);
      z += y[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] /= z;
  }
  const std::size_t ia = a.id();
  return a.tape().record("softmax", std::move(y), {a}, [ia, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_of(self);
    const Tensor& s = t.value(self);
    Tensor& ga = t.grad_ref(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * s[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        ga[r * cols + c] += s[r * cols + c] * (g[r * cols + c] - dot);
    }
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad_of(self)[0];
    Tensor& ga = t.grad_ref(ia);
    for (double& v : ga.data()) v += g;
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().numel());
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / n);
}

/// Sum of a ⊙ mask for a constant mask of a's shape.
inline Var masked_sum(const Var& a, const Tensor& mask) {
  if (a.shape() != mask.shape()) {
    throw ShapeError("masked_sum: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(mask.shape()) + " differ");
  }
  double s = 0.0;
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (mask[i] != 0.0) s += x[i] * mask[i];
  const std::size_t ia = a.id();
  return a.tape().record("masked_sum", Tensor::scalar(s), {a},
                         [ia, mask](Tape& t, std::size_t self) {
                           const double g = t.grad_of(self)[0];
                           Tensor& ga = t.grad_ref(ia);
                           for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g * mask[i];
                         });
}

/// Identity forward; backward multiplies the upstream gradient by -lambda.
inline Var gradient_reversal(const Var& a, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("gradient_reversal: lambda must be >= 0");
  const std::size_t ia = a.id();
  return a.tape().record("gradient_reversal", a.value(), {a},
                         [ia, lambda](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           Tensor& ga = t.grad_ref(ia);
                           for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += -lambda * g[i];
                         });
}

/// x W + b with b broadcast over rows.
inline Var linear(const Var& x, const Var& w, const Var& b) { return add(matmul(x, w), b); }

/// Sum over rows of -log p[target] weighted by `weights` (one-hot rows times
/// per-row mask/weight).
inline Var cross_entropy_sum(const Var& probs, const Tensor& weighted_onehot) {
  return scale(masked_sum(log(probs), weighted_onehot), -1.0);
}

}  // namespace crn::ad

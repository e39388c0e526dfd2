#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "crn/autodiff.hpp"
#include "crn/random.hpp"

namespace crn::models {

using ad::Parameter;
using ad::ParameterSet;
using ad::Tape;
using ad::Tensor;
using ad::Var;

/// FNV-1a of a name; folds parameter prefixes into RNG stream keys.
inline std::uint64_t name_key(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Glorot-uniform matrix.
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::matrix(fan_in, fan_out);
  for (double& v : w.data()) v = limit * (2.0 * uniform01(rng) - 1.0);
  return w;
}

inline void add_dense(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out,
                      Rng& rng) {
  ps.add(prefix + ".w", glorot(in, out, rng));
  ps.add(prefix + ".b", Tensor::matrix(1, out));
}

template <typename PS>
Var dense(Tape& tape, PS& ps, const std::string& prefix, const Var& x) {
  return ad::linear(x, tape.param(ps.at(prefix + ".w")), tape.param(ps.at(prefix + ".b")));
}

/// One LSTM cell: a single weight over [x, h] producing gates [i, f, g, o].
/// Forget-gate bias starts at 1.
inline void add_lstm(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t hidden,
                     Rng& rng) {
  ps.add(prefix + ".w", glorot(in + hidden, 4 * hidden, rng));
  Tensor b = Tensor::matrix(1, 4 * hidden);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
  ps.add(prefix + ".b", std::move(b));
}

inline std::size_t lstm_hidden(const ParameterSet& ps, const std::string& prefix) {
  return ps.at(prefix + ".b").value.cols() / 4;
}

namespace detail {

inline double sig(double x) { return ad::detail::sigmoid_scalar(x); }

/// c' = s(f) c + s(i) tanh(g) from gate pre-activations z = [i f g o].
inline Var lstm_cell_state(const Var& z, const Var& c) {
  const std::size_t rows = c.rows(), h = c.cols();
  if (z.rows() != rows || z.cols() != 4 * h) {
    throw ShapeError("lstm_cell_state: shapes " + ad::shape_str(z.shape()) + " and " +
                         ad::shape_str(c.shape()) + " do not conform");
  }
  Tensor y = Tensor::matrix(rows, h);
  const Tensor& zv = z.value();
  const Tensor& cv = c.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = &zv.data()[r * 4 * h];
    for (std::size_t j = 0; j < h; ++j) {
      y[r * h + j] = sig(zr[h + j]) * cv[r * h + j] + sig(zr[j]) * std::tanh(zr[2 * h + j]);
    }
  }
  const std::size_t iz = z.id(), ic = c.id();
  return z.tape().record("lstm_cell_state", std::move(y), {z, c},
                         [iz, ic, rows, h](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           const Tensor& zv = t.value(iz);
                           const Tensor& cv = t.value(ic);
                           const bool need_z = t.requires_grad(iz);
                           const bool need_c = t.requires_grad(ic);
                           Tensor* gz = need_z ? &t.grad_ref(iz) : nullptr;
                           Tensor* gc = need_c ? &t.grad_ref(ic) : nullptr;
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* zr = &zv.data()[r * 4 * h];
                             for (std::size_t j = 0; j < h; ++j) {
                               const double gy = g[r * h + j];
                               const double si = sig(zr[j]);
                               const double sf = sig(zr[h + j]);
                               const double tg = std::tanh(zr[2 * h + j]);
                               if (gz) {
                                 double* gzr = &gz->data()[r * 4 * h];
                                 gzr[j] += gy * tg * si * (1.0 - si);
                                 gzr[h + j] += gy * cv[r * h + j] * sf * (1.0 - sf);
                                 gzr[2 * h + j] += gy * si * (1.0 - tg * tg);
                               }
                               if (gc) (*gc)[r * h + j] += gy * sf;
                             }
                           }
                         });
}

/// h = s(o) tanh(c').
inline Var lstm_output(const Var& z, const Var& c) {
  const std::size_t rows = c.rows(), h = c.cols();
  Tensor y = Tensor::matrix(rows, h);
  const Tensor& zv = z.value();
  const Tensor& cv = c.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < h; ++j) {
      y[r * h + j] = sig(zv[r * 4 * h + 3 * h + j]) * std::tanh(cv[r * h + j]);
    }
  }
  const std::size_t iz = z.id(), ic = c.id();
  return z.tape().record("lstm_output", std::move(y), {z, c},
                         [iz, ic, rows, h](Tape& t, std::size_t self) {
                           const Tensor& g = t.grad_of(self);
                           const Tensor& zv = t.value(iz);
                           const Tensor& cv = t.value(ic);
                           Tensor* gz = t.requires_grad(iz) ? &t.grad_ref(iz) : nullptr;
                           Tensor* gc = t.requires_grad(ic) ? &t.grad_ref(ic) : nullptr;
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t j = 0; j < h; ++j) {
                               const double gy = g[r * h + j];
                               const double so = sig(zv[r * 4 * h + 3 * h + j]);
                               const double tc = std::tanh(cv[r * h + j]);
                               if (gz) (*gz)[r * 4 * h + 3 * h + j] += gy * tc * so * (1.0 - so);
                               if (gc) (*gc)[r * h + j] += gy * so * (1.0 - tc * tc);
                             }
                           }
                         });
}

}  // namespace detail

struct LstmState {
  Var h;
  Var c;
};

/// Advances the cell one step. `recurrent_mask`, if non-empty, multiplies the
/// hidden state fed back into the gates (variational dropout).
template <typename PS>
LstmState lstm_step(Tape& tape, PS& ps, const std::string& prefix, const Var& x, const LstmState& s,
                    const Tensor& recurrent_mask = Tensor()) {
  const Var h_in = recurrent_mask.numel() ? ad::mul(s.h, recurrent_mask) : s.h;
  const Var z = dense(tape, ps, prefix, ad::concat({x, h_in}));
  const Var c = detail::lstm_cell_state(z, s.c);
  return {detail::lstm_output(z, c), c};
}

inline LstmState zero_state(Tape& tape, std::size_t rows, std::size_t hidden) {
  return {tape.constant(Tensor::matrix(rows, hidden)), tape.constant(Tensor::matrix(rows, hidden))};
}

/// Rows of a one-hot encoding.
inline Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor t = Tensor::matrix(labels.size(), classes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= 0) t(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  return t;
}

}  // namespace crn::models

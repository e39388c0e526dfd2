#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <ostream>
#include <vector>

#include "crn/autodiff.hpp"
#include "crn/models/crn.hpp"
#include "crn/models/layers.hpp"
#include "crn/sim/io.hpp"
#include "crn/sim/tumor.hpp"

namespace crn::eval {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using sim::Trajectory;

// ---------------------------------------------------------------------------
// Balancing diagnostic

struct ProbeConfig {
  std::size_t hidden = 18;
  int epochs = 30;
  std::size_t batch_size = 512;
  double learning_rate = 0.005;
  std::uint64_t seed = 0;
  int history_steps = 5;
};

struct BalancingResult {
  double repr_accuracy = 0.0;     // %, classifier on frozen representation
  double history_accuracy = 0.0;  // %, same classifier on raw history
  double majority_rate = 0.0;     // %, most frequent treatment on held-out data
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
};

/// Feature matrix + labels; one row per patient-day.
struct LabeledRows {
  Tensor x;
  std::vector<int> y;
};

/// Last `steps` days of (z volume, z carried concentration, previous
/// treatment one-hot), zero padded before day 0, plus the subgroup one-hot.
inline LabeledRows raw_history_rows(const std::vector<Trajectory>& data, const models::Standardizer& s, int steps) {
  const std::size_t per = models::kCovariates + models::kTreatments;
  const std::size_t width = per * static_cast<std::size_t>(steps) + models::kStatic;
  std::size_t n = 0;
  for (const Trajectory& tr : data) n += static_cast<std::size_t>(tr.length());
  LabeledRows r;
  r.x = Tensor::matrix(n, width);
  std::size_t row = 0;
  for (const Trajectory& tr : data) {
    for (int t = 0; t < tr.length(); ++t, ++row) {
      for (int k = 0; k < steps; ++k) {
        const int day = t - k;
        if (day < 0) break;
        double* out = &r.x.data()[row * width + static_cast<std::size_t>(k) * per];
        out[0] = s.z_volume(tr.volume[static_cast<std::size_t>(day)]);
        out[1] = s.z_conc(tr.carried_conc(day));
        out[2 + static_cast<std::size_t>(models::previous_treatment(tr, day))] = 1.0;
      }
      r.x(row, per * static_cast<std::size_t>(steps) + static_cast<std::size_t>(tr.subgroup - 1)) = 1.0;
      r.y.push_back(tr.treatment[static_cast<std::size_t>(t)]);
    }
  }
  return r;
}

inline LabeledRows representation_rows(const models::CrnEncoder& enc, const std::vector<Trajectory>& data) {
  std::vector<const Trajectory*> p;
  for (const Trajectory& tr : data) p.push_back(&tr);
  const auto reps = enc.representation_matrices(p);
  std::size_t n = 0;
  for (const Tensor& m : reps) n += m.rows();
  const std::size_t R = enc.hp.repr;
  LabeledRows r;
  r.x = Tensor::matrix(n, R);
  std::size_t row = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::copy(reps[i].data().begin(), reps[i].data().end(), r.x.data().begin() + static_cast<std::ptrdiff_t>(row * R));
    row += reps[i].rows();
    for (int t = 0; t < data[i].length(); ++t) r.y.push_back(data[i].treatment[static_cast<std::size_t>(t)]);
  }
  return r;
}

/// Column z-scoring with statistics of `fit`.
inline void standardize_columns(const Tensor& fit, std::vector<Tensor*> targets) {
  const std::size_t c = fit.cols(), n = fit.rows();
  for (std::size_t j = 0; j < c; ++j) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < n; ++i) m += fit(i, j);
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) v += (fit(i, j) - m) * (fit(i, j) - m);
    const double sd = std::sqrt(v / static_cast<double>(n));
    const double scale = sd > 1e-12 ? 1.0 / sd : 0.0;
    for (Tensor* t : targets)
      for (std::size_t i = 0; i < t->rows(); ++i) (*t)(i, j) = ((*t)(i, j) - m) * scale;
  }
}

/// Trains an FC-ELU-softmax probe (the shape of the treatment classifier)
/// and returns held-out accuracy in %.
inline double probe_accuracy(LabeledRows train, LabeledRows test, const ProbeConfig& cfg) {
  if (train.y.empty() || test.y.empty()) throw ConfigError("probe: empty data");
  Tensor fit = train.x;
  standardize_columns(fit, {&train.x, &test.x});
  ad::ParameterSet ps;
  Rng rng = make_rng({cfg.seed, models::name_key("probe")});
  models::add_dense(ps, "probe.h", train.x.cols(), cfg.hidden, rng);
  models::add_dense(ps, "probe.out", cfg.hidden, models::kTreatments, rng);
  ad::Adam adam(ps.all(), {cfg.learning_rate, 0.9, 0.999, 1e-8, 0.0});
  const std::size_t n = train.y.size(), w = train.x.cols();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int e = 0; e < cfg.epochs; ++e) {
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      Tensor xb = Tensor::matrix(hi - lo, w);
      std::vector<int> yb;
      for (std::size_t i = lo; i < hi; ++i) {
        std::copy(train.x.data().begin() + static_cast<std::ptrdiff_t>(order[i] * w),
                  train.x.data().begin() + static_cast<std::ptrdiff_t>((order[i] + 1) * w),
                  xb.data().begin() + static_cast<std::ptrdiff_t>((i - lo) * w));
        yb.push_back(train.y[order[i]]);
      }
      Tape tape;
      const Var p = ad::softmax(models::dense(tape, ps, "probe.out",
                                              ad::elu(models::dense(tape, ps, "probe.h", tape.constant(xb)))));
      const Var loss = ad::scale(ad::cross_entropy_sum(p, models::one_hot(yb, models::kTreatments)),
                                 1.0 / static_cast<double>(hi - lo));
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
    }
  }
  Tape tape(false);
  const ad::ParameterSet& cps = ps;
  const Tensor p = models::dense(tape, cps, "probe.out",
                                 ad::elu(models::dense(tape, cps, "probe.h", tape.constant(test.x)))).value();
  std::size_t ok = 0;
  for (std::size_t i = 0; i < test.y.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < models::kTreatments; ++j)
      if (p(i, j) > p(i, best)) best = j;
    ok += static_cast<int>(best) == test.y[i];
  }
  return 100.0 * static_cast<double>(ok) / static_cast<double>(test.y.size());
}

inline BalancingResult balancing_diagnostic(const models::CrnEncoder& enc, const std::vector<Trajectory>& train,
                                            const std::vector<Trajectory>& held_out, const ProbeConfig& cfg = {}) {
  BalancingResult r;
  LabeledRows rt = representation_rows(enc, train), rh = representation_rows(enc, held_out);
  r.train_rows = rt.y.size();
  r.test_rows = rh.y.size();
  r.repr_accuracy = probe_accuracy(std::move(rt), std::move(rh), cfg);
  r.history_accuracy = probe_accuracy(raw_history_rows(train, enc.stats, cfg.history_steps),
                                      raw_history_rows(held_out, enc.stats, cfg.history_steps), cfg);
  std::size_t counts[models::kTreatments] = {0, 0, 0, 0}, n = 0;
  for (const Trajectory& tr : held_out)
    for (int a : tr.treatment) {
      ++counts[a];
      ++n;
    }
  r.majority_rate = 100.0 * static_cast<double>(*std::max_element(counts, counts + 4)) / static_cast<double>(n);
  return r;
}

// ---------------------------------------------------------------------------
// Representation export

inline void export_representations(std::ostream& os, const models::CrnEncoder& enc, const std::vector<Trajectory>& data) {
  os << "patient_id,t";
  for (std::size_t j = 0; j < enc.hp.repr; ++j) os << ",phi_" << j;
  os << ",treatment\n";
  std::vector<const Trajectory*> p;
  for (const Trajectory& tr : data) p.push_back(&tr);
  const auto reps = enc.representation_matrices(p);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int t = 0; t < data[i].length(); ++t) {
      os << data[i].patient_id << ',' << t;
      for (std::size_t j = 0; j < enc.hp.repr; ++j) os << ',' << sim::format_double(reps[i](static_cast<std::size_t>(t), j));
      os << ',' << data[i].treatment[static_cast<std::size_t>(t)] << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Optimal treatment classifier for fixed representation distributions

/// sum_j E_{x ~ P_j} log G_j(x); G is points x K, P is K x points.
inline double classifier_objective(const std::vector<std::vector<double>>& P, const std::vector<std::vector<double>>& G) {
  double s = 0.0;
  for (std::size_t j = 0; j < P.size(); ++j)
    for (std::size_t x = 0; x < P[j].size(); ++x)
      if (P[j][x] > 0.0) s += P[j][x] * std::log(G[x][j]);
  return s;
}

/// G*_j(x) = P_j(x) / sum_i P_i(x); uniform where no distribution has mass.
inline std::vector<std::vector<double>> optimal_classifier(const std::vector<std::vector<double>>& P) {
  const std::size_t K = P.size(), M = P.front().size();
  std::vector<std::vector<double>> G(M, std::vector<double>(K, 1.0 / static_cast<double>(K)));
  for (std::size_t x = 0; x < M; ++x) {
    double tot = 0.0;
    for (std::size_t j = 0; j < K; ++j) tot += P[j][x];
    if (tot > 0.0)
      for (std::size_t j = 0; j < K; ++j) G[x][j] = P[j][x] / tot;
  }
  return G;
}

struct ClassifierCheck {
  std::vector<std::vector<double>> closed_form;
  std::vector<std::vector<double>> optimized;
  double max_tv = 0.0;  // worst per-point total variation over points with mass
  double closed_objective = 0.0;
  double optimized_objective = 0.0;
};

/// Softmax table fitted by gradient ascent on the objective, compared with
/// the closed form.
inline ClassifierCheck verify_optimal_classifier(const std::vector<std::vector<double>>& P, int iterations = 20000,
                                                 double learning_rate = 0.5) {
  if (P.size() < 2) throw ConfigError("verify_optimal_classifier: need K >= 2 distributions");
  const std::size_t K = P.size(), M = P.front().size();
  if (M == 0 || M > 16) throw ConfigError("verify_optimal_classifier: support must have 1..16 points");
  for (const auto& p : P) {
    if (p.size() != M) throw ConfigError("verify_optimal_classifier: distributions differ in support size");
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw ConfigError("verify_optimal_classifier: negative probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("verify_optimal_classifier: distribution not normalized");
  }
  ClassifierCheck c;
  c.closed_form = optimal_classifier(P);
  std::vector<std::vector<double>> theta(M, std::vector<double>(K, 0.0)), G(M, std::vector<double>(K));
  auto refresh = [&] {
    for (std::size_t x = 0; x < M; ++x) {
      const double mx = *std::max_element(theta[x].begin(), theta[x].end());
      double z = 0.0;
      for (std::size_t j = 0; j < K; ++j) z += (G[x][j] = std::exp(theta[x][j] - mx));
      for (std::size_t j = 0; j < K; ++j) G[x][j] /= z;
    }
  };
  refresh();
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t x = 0; x < M; ++x) {
      double tot = 0.0;
      for (std::size_t j = 0; j < K; ++j) tot += P[j][x];
      if (tot <= 0.0) continue;
      // gradient divided by the point's mass so every point converges at the same rate
      for (std::size_t j = 0; j < K; ++j) theta[x][j] += learning_rate * (P[j][x] / tot - G[x][j]);
    }
    refresh();
  }
  c.optimized = G;
  for (std::size_t x = 0; x < M; ++x) {
    double tot = 0.0, tv = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      tot += P[j][x];
      tv += std::abs(G[x][j] - c.closed_form[x][j]);
    }
    if (tot > 0.0) c.max_tv = std::max(c.max_tv, 0.5 * tv);
  }
  c.closed_objective = classifier_objective(P, c.closed_form);
  c.optimized_objective = classifier_objective(P, c.optimized);
  return c;
}

}  // namespace crn::eval

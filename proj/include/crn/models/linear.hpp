#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "crn/error.hpp"
#include "crn/sim/tumor.hpp"

namespace crn::models {

using sim::Trajectory;

/// Dense row-major design matrix.
struct Design {
  std::size_t cols = 0;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> w;

  std::size_t rows() const { return y.size(); }
  void add(const std::vector<double>& row, double target, double weight = 1.0) {
    if (cols == 0) cols = row.size();
    if (row.size() != cols) throw ShapeError("Design: row width differs");
    x.insert(x.end(), row.begin(), row.end());
    y.push_back(target);
    w.push_back(weight);
  }
};

/// Solves A x = b (A is n x n, row-major) by Gaussian elimination with
/// partial pivoting.
inline std::vector<double> solve_linear_system(std::vector<double> a, std::vector<double> b) {
  const std::size_t n = b.size();
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) <= 1e-12 * std::max(scale, 1.0)) {
      throw NumericalError("least squares: singular design matrix (column " + std::to_string(col) +
                           "); add ridge regularization");
    }
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i * n + c] * x[c];
    x[i] = s / a[i * n + i];
  }
  return x;
}

/// argmin_b sum_i w_i (y_i - x_i b)^2 + ridge |b|^2 via the normal equations.
inline std::vector<double> weighted_least_squares(const Design& d, double ridge = 0.0) {
  if (d.rows() == 0) throw ConfigError("least squares: no rows");
  const std::size_t p = d.cols;
  std::vector<double> xtx(p * p, 0.0), xty(p, 0.0);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    const double* xi = &d.x[i * p];
    const double wi = d.w[i];
    for (std::size_t a = 0; a < p; ++a) {
      const double wa = wi * xi[a];
      xty[a] += wa * d.y[i];
      for (std::size_t b = a; b < p; ++b) xtx[a * p + b] += wa * xi[b];
    }
  }
  for (std::size_t a = 0; a < p; ++a) {
    xtx[a * p + a] += ridge;
    for (std::size_t b = 0; b < a; ++b) xtx[a * p + b] = xtx[b * p + a];
  }
  return solve_linear_system(std::move(xtx), std::move(xty));
}

inline double dot(const std::vector<double>& a, const double* b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct LogisticConfig {
  double l2 = 1e-4;
  int max_iters = 50;
  double tolerance = 1e-10;
};

/// Logistic regression on standardised features (column 0 is the intercept
/// and is left unscaled) fit by damped Newton steps on the weighted mean
/// log-loss plus l2/2 |coef|^2.
struct LogisticModel {
  std::vector<double> coef;   // on standardised features
  std::vector<double> mean;
  std::vector<double> scale;

  double predict(const double* x) const {
    double z = coef[0];
    for (std::size_t j = 1; j < coef.size(); ++j) z += coef[j] * (x[j] - mean[j]) / scale[j];
    return logistic(z);
  }
  double predict(const std::vector<double>& x) const { return predict(x.data()); }

  static LogisticModel fit(const Design& d, const LogisticConfig& cfg = {}) {
    if (d.rows() == 0) throw ConfigError("logistic regression: no rows");
    const std::size_t p = d.cols, n = d.rows();
    LogisticModel m;
    m.mean.assign(p, 0.0);
    m.scale.assign(p, 1.0);
    for (std::size_t j = 1; j < p; ++j) {
      double s = 0, ss = 0;
      for (std::size_t i = 0; i < n; ++i) {
        s += d.x[i * p + j];
        ss += d.x[i * p + j] * d.x[i * p + j];
      }
      m.mean[j] = s / n;
      const double var = ss / n - m.mean[j] * m.mean[j];
      m.scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    std::vector<double> z(n * p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < p; ++j)
        z[i * p + j] = j == 0 ? 1.0 : (d.x[i * p + j] - m.mean[j]) / m.scale[j];
    m.coef.assign(p, 0.0);
    double wsum = 0.0;
    for (double w : d.w) wsum += w;
    if (!(wsum > 0.0)) throw ConfigError("logistic regression: weights sum to zero");
    auto objective = [&](const std::vector<double>& c) {
      double f = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double u = dot(c, &z[i * p]);
        // log(1 + e^u) - y u, computed stably
        const double sp = u > 0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
        f += d.w[i] * (sp - d.y[i] * u);
      }
      double r = 0.0;
      for (double v : c) r += v * v;
      return f / wsum + 0.5 * cfg.l2 * r;
    };
    double f = objective(m.coef);
    std::vector<double> grad(p), hess(p * p);
    for (int it = 0; it < cfg.max_iters; ++it) {
      std::fill(grad.begin(), grad.end(), 0.0);
      std::fill(hess.begin(), hess.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double* zi = &z[i * p];
        const double q = logistic(dot(m.coef, zi));
        const double r = d.w[i] * (q - d.y[i]);
        const double h = d.w[i] * q * (1.0 - q);
        for (std::size_t a = 0; a < p; ++a) {
          grad[a] += r * zi[a];
          for (std::size_t b = 0; b <= a; ++b) hess[a * p + b] += h * zi[a] * zi[b];
        }
      }
      double norm = 0.0;
      for (std::size_t a = 0; a < p; ++a) {
        grad[a] = grad[a] / wsum + cfg.l2 * m.coef[a];
        norm += grad[a] * grad[a];
        for (std::size_t b = 0; b <= a; ++b) {
          hess[a * p + b] /= wsum;
          hess[b * p + a] = hess[a * p + b];
        }
        hess[a * p + a] += cfg.l2;
      }
      if (std::sqrt(norm) < cfg.tolerance) break;
      const std::vector<double> step = solve_linear_system(hess, grad);
      double t = 1.0;
      std::vector<double> next(p);
      for (int halve = 0; halve < 30; ++halve, t *= 0.5) {
        for (std::size_t a = 0; a < p; ++a) next[a] = m.coef[a] - t * step[a];
        const double fn = objective(next);
        if (fn <= f) {
          f = fn;
          break;
        }
      }
      m.coef = next;
    }
    return m;
  }

  nlohmann::json to_json() const { return {{"coef", coef}, {"mean", mean}, {"scale", scale}}; }
  static LogisticModel from_json(const nlohmann::json& j) {
    LogisticModel m;
    m.coef = j.at("coef").get<std::vector<double>>();
    m.mean = j.at("mean").get<std::vector<double>>();
    m.scale = j.at("scale").get<std::vector<double>>();
    return m;
  }
};

// ---------------------------------------------------------------------------
// Marginal structural model features

inline int cumulative_count(const Trajectory& tr, int t, int bit) {
  int n = 0;
  for (int i = 0; i < t; ++i) n += (tr.treatment[static_cast<std::size_t>(i)] & bit) != 0;
  return n;
}

/// X_t = (V_t, C_{t-1}); X_{-1} is taken equal to X_0.
inline void append_covariates(const Trajectory& tr, int t, std::vector<double>& row) {
  const int tp = std::max(t - 1, 0);
  row.push_back(tr.volume[static_cast<std::size_t>(t)]);
  row.push_back(tr.carried_conc(t));
  row.push_back(tr.volume[static_cast<std::size_t>(tp)]);
  row.push_back(tr.carried_conc(tp));
  row.push_back(tr.subgroup == 2 ? 1.0 : 0.0);
  row.push_back(tr.subgroup == 3 ? 1.0 : 0.0);
}

/// [1, past chemo count, past radio count]
inline std::vector<double> numerator_features(const Trajectory& tr, int t) {
  return {1.0, static_cast<double>(cumulative_count(tr, t, sim::kChemo)),
          static_cast<double>(cumulative_count(tr, t, sim::kRadio))};
}

/// numerator features plus X_t, X_{t-1} and V.
inline std::vector<double> denominator_features(const Trajectory& tr, int t) {
  std::vector<double> row = numerator_features(tr, t);
  append_covariates(tr, t, row);
  return row;
}

/// [1, planned chemo count, planned radio count, X_t, X_{t-1}, V]
inline std::vector<double> outcome_features(const Trajectory& tr, int t, const std::vector<int>& plan) {
  double chemo = 0, radio = 0;
  for (int a : plan) {
    chemo += sim::has_chemo(a);
    radio += sim::has_radio(a);
  }
  std::vector<double> row{1.0, chemo, radio};
  append_covariates(tr, t, row);
  return row;
}

inline std::vector<int> factual_plan(const Trajectory& tr, int t, int tau) {
  return {tr.treatment.begin() + t, tr.treatment.begin() + t + tau};
}

/// Per-day stabilised factors f_n = prod_k num_k(A_{n,k}) / den_k(A_{n,k}).
struct PropensityModels {
  LogisticModel numerator[2];
  LogisticModel denominator[2];

  static PropensityModels fit(const std::vector<const Trajectory*>& data, const LogisticConfig& cfg = {}) {
    PropensityModels m;
    for (int k = 0; k < 2; ++k) {
      const int bit = k == 0 ? sim::kChemo : sim::kRadio;
      Design num, den;
      for (const Trajectory* tr : data) {
        for (int t = 0; t < tr->length(); ++t) {
          const double y = (tr->treatment[static_cast<std::size_t>(t)] & bit) ? 1.0 : 0.0;
          num.add(numerator_features(*tr, t), y);
          den.add(denominator_features(*tr, t), y);
        }
      }
      m.numerator[k] = LogisticModel::fit(num, cfg);
      m.denominator[k] = LogisticModel::fit(den, cfg);
    }
    return m;
  }

  std::vector<double> factors(const Trajectory& tr) const {
    std::vector<double> f(static_cast<std::size_t>(tr.length()));
    for (int t = 0; t < tr.length(); ++t) {
      const auto nf = numerator_features(tr, t);
      const auto df = denominator_features(tr, t);
      double r = 1.0;
      for (int k = 0; k < 2; ++k) {
        const int bit = k == 0 ? sim::kChemo : sim::kRadio;
        const bool given = (tr.treatment[static_cast<std::size_t>(t)] & bit) != 0;
        const double pn = numerator[k].predict(nf);
        const double pd = denominator[k].predict(df);
        r *= (given ? pn : 1.0 - pn) / (given ? pd : 1.0 - pd);
      }
      f[static_cast<std::size_t>(t)] = r;
    }
    return f;
  }

  nlohmann::json to_json() const {
    return {{"numerator", {numerator[0].to_json(), numerator[1].to_json()}},
            {"denominator", {denominator[0].to_json(), denominator[1].to_json()}}};
  }
  static PropensityModels from_json(const nlohmann::json& j) {
    PropensityModels m;
    for (int k = 0; k < 2; ++k) {
      m.numerator[k] = LogisticModel::from_json(j.at("numerator").at(k));
      m.denominator[k] = LogisticModel::from_json(j.at("denominator").at(k));
    }
    return m;
  }
};

/// Prefix sums of log factors, so SW(t, tau) = exp(L[t+tau] - L[t]).
struct WeightTable {
  std::vector<double> log_prefix;

  explicit WeightTable(const std::vector<double>& factors) : log_prefix(factors.size() + 1, 0.0) {
    for (std::size_t i = 0; i < factors.size(); ++i) {
      if (!(factors[i] > 0.0)) throw NumericalError("stabilized weight factor must be > 0");
      log_prefix[i + 1] = log_prefix[i] + std::log(factors[i]);
    }
  }

  /// Product of the tau factors for days t .. t+tau-1.
  double weight(int t, int tau) const {
    return std::exp(log_prefix[static_cast<std::size_t>(t + tau)] - log_prefix[static_cast<std::size_t>(t)]);
  }
};

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw ConfigError("percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Clips weights into [q_lo, q_hi] percentiles; returns the bounds used.
inline std::pair<double, double> truncate_weights(std::vector<double>& w, double q_lo = 0.01, double q_hi = 0.99) {
  const double lo = percentile(w, q_lo);
  const double hi = percentile(w, q_hi);
  for (double& x : w) x = std::clamp(x, lo, hi);
  return {lo, hi};
}

struct MsmConfig {
  std::vector<int> horizons{1};
  bool use_weights = true;  // false gives the unweighted linear baseline
  double truncate_lo = 0.01;
  double truncate_hi = 0.99;
  LogisticConfig logistic;
};

/// Linear outcome regressions, one per horizon, optionally weighted by
/// truncated stabilised weights.
class MsmModel {
 public:
  bool weighted = true;
  std::map<int, std::vector<double>> coef;          // horizon -> coefficients
  std::map<int, std::pair<double, double>> bounds;  // horizon -> truncation bounds
  std::optional<PropensityModels> propensity;

  static MsmModel fit(const std::vector<const Trajectory*>& data, const MsmConfig& cfg) {
    MsmModel m;
    m.weighted = cfg.use_weights;
    std::vector<WeightTable> tables;
    if (cfg.use_weights) {
      m.propensity = PropensityModels::fit(data, cfg.logistic);
      for (const Trajectory* tr : data) tables.emplace_back(m.propensity->factors(*tr));
    }
    for (int tau : cfg.horizons) {
      if (tau < 1) throw ConfigError("MSM horizon must be >= 1");
      Design d;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const Trajectory& tr = *data[i];
        for (int t = 0; t + tau <= tr.length(); ++t) {
          d.add(outcome_features(tr, t, factual_plan(tr, t, tau)), tr.volume[static_cast<std::size_t>(t + tau)],
                cfg.use_weights ? tables[i].weight(t, tau) : 1.0);
        }
      }
      if (d.rows() == 0) throw ConfigError("MSM: no training rows for horizon " + std::to_string(tau));
      if (cfg.use_weights) m.bounds[tau] = truncate_weights(d.w, cfg.truncate_lo, cfg.truncate_hi);
      m.coef[tau] = weighted_least_squares(d);
    }
    return m;
  }

  bool has_horizon(int tau) const { return coef.count(tau) != 0; }

  double predict(const Trajectory& tr, int t, const std::vector<int>& plan) const {
    const auto it = coef.find(static_cast<int>(plan.size()));
    if (it == coef.end()) {
      throw ConfigError("MSM: no regression fitted for horizon " + std::to_string(plan.size()));
    }
    const auto row = outcome_features(tr, t, plan);
    return dot(it->second, row.data());
  }

  nlohmann::json to_json() const {
    nlohmann::json c = nlohmann::json::object();
    for (const auto& [tau, v] : coef) c[std::to_string(tau)] = v;
    nlohmann::json j = {{"weighted", weighted}, {"coef", c}};
    if (propensity) j["propensity"] = propensity->to_json();
    return j;
  }
  static MsmModel from_json(const nlohmann::json& j) {
    MsmModel m;
    m.weighted = j.at("weighted").get<bool>();
    for (const auto& [k, v] : j.at("coef").items()) m.coef[std::stoi(k)] = v.get<std::vector<double>>();
    if (j.contains("propensity")) m.propensity = PropensityModels::from_json(j.at("propensity"));
    return m;
  }
};

}  // namespace crn::models

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crn/eval/metrics.hpp"
#include "crn/models/crn.hpp"
#include "crn/models/linear.hpp"
#include "crn/models/rnn.hpp"
#include "crn/sim/counterfactual.hpp"
#include "crn/train/rmsn.hpp"

namespace crn::eval {

using ad::Tensor;

/// Encoder for tau = 1, encoder representation + decoder for tau > 1.
class CrnEstimator : public Estimator {
 public:
  models::CrnEncoder encoder;
  std::optional<models::CrnDecoder> decoder;
  std::string label = "CRN";

  CrnEstimator(models::CrnEncoder e, std::optional<models::CrnDecoder> d, std::string l = "CRN")
      : encoder(std::move(e)), decoder(std::move(d)), label(std::move(l)) {}

  std::string name() const override { return label; }
  bool supports(int tau) const override { return tau == 1 || (tau > 1 && decoder.has_value()); }

  std::vector<double> predict(const Trajectory& tr, int t, const std::vector<std::vector<int>>& plans) const override {
    BranchSet b;
    b.t = t;
    b.tau = plans.empty() ? 1 : static_cast<int>(plans.front().size());
    b.plans = plans;
    return predict_patient(tr, {&b}).front();
  }

  std::vector<std::vector<double>> predict_patient(const Trajectory& tr,
                                                   const std::vector<const BranchSet*>& sets) const override {
    const Tensor phi = encoder.representation_matrix(tr);
    const std::size_t R = phi.cols();
    std::size_t rows = 0;
    for (const BranchSet* b : sets) rows += b->plans.size();
    std::vector<std::vector<double>> out;
    if (rows == 0) return std::vector<std::vector<double>>(sets.size());
    Tensor init = Tensor::matrix(rows, R);
    std::vector<int> first;
    std::vector<double> v0;
    std::vector<int> prev, sub;
    std::vector<std::vector<int>> plans;
    std::size_t r = 0;
    for (const BranchSet* b : sets) {
      if (b->t < 0 || b->t >= tr.length()) throw ConfigError("CRN: anchor outside the trajectory");
      for (const auto& p : b->plans) {
        for (std::size_t j = 0; j < R; ++j) init(r, j) = phi(static_cast<std::size_t>(b->t), j);
        first.push_back(p.front());
        v0.push_back(tr.volume[static_cast<std::size_t>(b->t)]);
        prev.push_back(models::previous_treatment(tr, b->t));
        sub.push_back(tr.subgroup);
        plans.push_back(p);
        ++r;
      }
    }
    // one decoder call per horizon, one encoder head call for tau = 1
    std::vector<double> flat(rows);
    std::map<std::size_t, std::vector<std::size_t>> by_tau;
    for (std::size_t i = 0; i < rows; ++i) by_tau[plans[i].size()].push_back(i);
    for (const auto& [tau, idx] : by_tau) {
      Tensor sub_init = Tensor::matrix(idx.size(), R);
      std::vector<int> a, pv, sg;
      std::vector<double> vv;
      std::vector<std::vector<int>> pl;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        for (std::size_t j = 0; j < R; ++j) sub_init(k, j) = init(idx[k], j);
        a.push_back(first[idx[k]]);
        vv.push_back(v0[idx[k]]);
        pv.push_back(prev[idx[k]]);
        sg.push_back(sub[idx[k]]);
        pl.push_back(plans[idx[k]]);
      }
      if (tau == 1) {
        const auto y = encoder.predict_from_repr(sub_init, a);
        for (std::size_t k = 0; k < idx.size(); ++k) flat[idx[k]] = y[k];
      } else {
        if (!decoder) throw ConfigError(label + ": multi-step prediction needs a decoder");
        const auto y = decoder->predict(sub_init, vv, pv, sg, pl);
        for (std::size_t k = 0; k < idx.size(); ++k) flat[idx[k]] = y[k].back();
      }
    }
    r = 0;
    for (const BranchSet* b : sets) {
      out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(r),
                       flat.begin() + static_cast<std::ptrdiff_t>(r + b->plans.size()));
      r += b->plans.size();
    }
    return out;
  }
};

/// One-step recurrent baseline.
class RnnEstimator : public Estimator {
 public:
  models::SequenceRegressor model;
  explicit RnnEstimator(models::SequenceRegressor m) : model(std::move(m)) {}
  std::string name() const override { return "RNN"; }
  bool supports(int tau) const override { return tau == 1; }
  std::vector<double> predict(const Trajectory& tr, int t, const std::vector<std::vector<int>>& plans) const override {
    std::vector<std::pair<int, int>> q;
    for (const auto& p : plans) {
      if (p.size() != 1) throw ConfigError("RNN: one-step plans only");
      q.emplace_back(t, p.front());
    }
    return models::one_step_counterfactuals(model, tr, q);
  }
  std::vector<std::vector<double>> predict_patient(const Trajectory& tr,
                                                   const std::vector<const BranchSet*>& sets) const override {
    std::vector<std::pair<int, int>> q;
    for (const BranchSet* b : sets)
      for (const auto& p : b->plans) {
        if (p.size() != 1) throw ConfigError("RNN: one-step plans only");
        q.emplace_back(b->t, p.front());
      }
    const auto y = models::one_step_counterfactuals(model, tr, q);
    std::vector<std::vector<double>> out;
    std::size_t r = 0;
    for (const BranchSet* b : sets) {
      out.emplace_back(y.begin() + static_cast<std::ptrdiff_t>(r), y.begin() + static_cast<std::ptrdiff_t>(r + b->plans.size()));
      r += b->plans.size();
    }
    return out;
  }
};

class RmsnEstimator : public Estimator {
 public:
  train::RmsnModel model;
  explicit RmsnEstimator(train::RmsnModel m) : model(std::move(m)) {}
  std::string name() const override { return "RMSN"; }
  bool supports(int tau) const override { return tau == 1 || (tau > 1 && model.has_decoder); }
  std::vector<double> predict(const Trajectory& tr, int t, const std::vector<std::vector<int>>& plans) const override {
    return model.predict(tr, t, plans);
  }
};

/// MSM (weighted) or the plain linear regression baseline.
class LinearEstimator : public Estimator {
 public:
  models::MsmModel model;
  explicit LinearEstimator(models::MsmModel m) : model(std::move(m)) {}
  std::string name() const override { return model.weighted ? "MSM" : "Linear"; }
  bool supports(int tau) const override { return model.has_horizon(tau); }
  std::vector<double> predict(const Trajectory& tr, int t, const std::vector<std::vector<int>>& plans) const override {
    std::vector<double> out;
    for (const auto& p : plans) out.push_back(model.predict(tr, t, p));
    return out;
  }
};

/// Reads the simulator: exact counterfactuals for simulated patients.
class OracleEstimator : public Estimator {
 public:
  sim::SimConfig config;
  explicit OracleEstimator(sim::SimConfig c) : config(std::move(c)) {}
  std::string name() const override { return "Oracle"; }
  bool supports(int) const override { return true; }
  std::vector<double> predict(const Trajectory& tr, int t, const std::vector<std::vector<int>>& plans) const override {
    if (!tr.params) throw ConfigError("Oracle: patient has no simulator parameters");
    std::vector<double> out;
    for (const auto& p : plans) out.push_back(sim::rollout(tr, *tr.params, t, p, config).back());
    return out;
  }
};

/// Predicts a fixed volume for every plan (reference for RMSE checks).
class ConstantEstimator : public Estimator {
 public:
  double value = 0.0;
  explicit ConstantEstimator(double v) : value(v) {}
  std::string name() const override { return "Constant"; }
  bool supports(int) const override { return true; }
  std::vector<double> predict(const Trajectory&, int, const std::vector<std::vector<int>>& plans) const override {
    return std::vector<double>(plans.size(), value);
  }
};

}  // namespace crn::eval

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "crn/error.hpp"
#include "crn/sim/counterfactual.hpp"
#include "crn/sim/tumor.hpp"

namespace crn::eval {

using sim::BranchSet;
using sim::Trajectory;

/// 100 * sqrt(mean((p - y)^2)) / 1150.
inline double normalized_rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.empty()) throw ConfigError("normalized_rmse: empty input");
  if (pred.size() != truth.size()) throw ConfigError("normalized_rmse: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return 100.0 * std::sqrt(s / static_cast<double>(pred.size())) / sim::kMaxVolume;
}

/// Anything that predicts V_{t+tau} for a list of plans of equal length tau.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual std::string name() const = 0;
  virtual bool supports(int tau) const = 0;
  virtual std::vector<double> predict(const Trajectory& tr, int t, const std::vector<std::vector<int>>& plans) const = 0;

  /// All branch sets of one patient; override to batch.
  virtual std::vector<std::vector<double>> predict_patient(const Trajectory& tr,
                                                           const std::vector<const BranchSet*>& sets) const {
    std::vector<std::vector<double>> out;
    out.reserve(sets.size());
    for (const BranchSet* b : sets) out.push_back(predict(tr, b->t, b->plans));
    return out;
  }
};

/// Per-anchor predicted outcome tables aligned with the branch sets.
struct PredictionTable {
  std::vector<const BranchSet*> sets;
  std::vector<std::vector<double>> predicted;
};

inline PredictionTable predict_all(const Estimator& m, const std::vector<Trajectory>& data,
                                   const std::vector<BranchSet>& branches) {
  std::map<std::int64_t, const Trajectory*> by_id;
  for (const Trajectory& tr : data) by_id[tr.patient_id] = &tr;
  std::map<std::int64_t, std::vector<const BranchSet*>> groups;
  for (const BranchSet& b : branches) {
    if (!m.supports(b.tau)) throw ConfigError(m.name() + ": horizon " + std::to_string(b.tau) + " not supported");
    if (by_id.count(b.patient_id) == 0) {
      throw ConfigError("branch set refers to unknown patient " + std::to_string(b.patient_id));
    }
    groups[b.patient_id].push_back(&b);
  }
  PredictionTable out;
  for (const auto& [id, sets] : groups) {
    auto p = m.predict_patient(*by_id.at(id), sets);
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (p[i].size() != sets[i]->plans.size()) throw ShapeError(m.name() + ": one prediction per plan expected");
      for (double v : p[i]) {
        if (!std::isfinite(v)) throw NumericalError(m.name() + ": non-finite prediction for patient " + std::to_string(id));
      }
      out.sets.push_back(sets[i]);
      out.predicted.push_back(std::move(p[i]));
    }
  }
  return out;
}

/// Pooled over every (anchor, plan).
inline double table_rmse(const PredictionTable& t) {
  std::vector<double> p, y;
  for (std::size_t i = 0; i < t.sets.size(); ++i) {
    p.insert(p.end(), t.predicted[i].begin(), t.predicted[i].end());
    y.insert(y.end(), t.sets[i]->true_outcomes.begin(), t.sets[i]->true_outcomes.end());
  }
  return normalized_rmse(p, y);
}

inline double evaluate_one_step(const Estimator& m, const std::vector<Trajectory>& data,
                                const std::vector<BranchSet>& branches) {
  for (const BranchSet& b : branches)
    if (b.tau != 1 || b.plans.size() != 4) throw ConfigError("evaluate_one_step: needs tau = 1 sets with 4 options");
  return table_rmse(predict_all(m, data, branches));
}

inline double evaluate_multi_step(const Estimator& m, const std::vector<Trajectory>& data,
                                  const std::vector<BranchSet>& branches) {
  for (const BranchSet& b : branches)
    if (b.tau < 2) throw ConfigError("evaluate_multi_step: needs tau >= 2 sets");
  return table_rmse(predict_all(m, data, branches));
}

// ---------------------------------------------------------------------------
// Treatment and timing selection

inline constexpr double kTieEpsilon = 0.001;

/// Arm 0 = chemotherapy, 1 = radiotherapy. Outcomes are laid out as
/// counterfactual_plans(tau): tau chemo timings then tau radio timings.
struct Selection {
  int treatment = 0;                         // arm holding the lowest outcome
  int timing = 0;                            // argmin within that arm
  std::vector<int> tied_treatments;          // arms holding an outcome within eps of the minimum
  std::vector<std::vector<int>> tied_timings;  // per arm, timings within eps of that arm's minimum
};

inline Selection select_treatment_and_timing(const std::vector<double>& outcomes, double eps = kTieEpsilon) {
  if (outcomes.size() < 2 || outcomes.size() % 2 != 0) {
    throw ConfigError("select_treatment_and_timing: expected 2*tau outcomes");
  }
  const std::size_t tau = outcomes.size() / 2;
  Selection s;
  s.tied_timings.resize(2);
  const auto gmin = std::min_element(outcomes.begin(), outcomes.end());
  const double best = *gmin;
  s.treatment = static_cast<int>(static_cast<std::size_t>(gmin - outcomes.begin()) / tau);
  for (int arm = 0; arm < 2; ++arm) {
    const auto lo = outcomes.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(arm) * tau);
    const double amin = *std::min_element(lo, lo + static_cast<std::ptrdiff_t>(tau));
    if (amin <= best + eps) s.tied_treatments.push_back(arm);
    for (std::size_t k = 0; k < tau; ++k)
      if (lo[static_cast<std::ptrdiff_t>(k)] <= amin + eps) s.tied_timings[static_cast<std::size_t>(arm)].push_back(static_cast<int>(k));
  }
  const auto lo = outcomes.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(s.treatment) * tau);
  s.timing = static_cast<int>(std::min_element(lo, lo + static_cast<std::ptrdiff_t>(tau)) - lo);
  return s;
}

struct SelectionAccuracy {
  double treatment = 0.0;            // %
  double timing = 0.0;               // %, unconditional
  double timing_conditional = 0.0;   // %, among anchors with a correct treatment
  std::size_t anchors = 0;
  std::size_t treatment_correct = 0;
};

/// Model selection vs the truth's selection (ties within eps on the truth
/// side count as correct). The unconditional timing score checks the
/// model's timing against the optimal timings of the true best arm(s).
inline SelectionAccuracy selection_accuracy(const PredictionTable& t, double eps = kTieEpsilon) {
  SelectionAccuracy a;
  std::size_t timing_ok = 0, timing_ok_cond = 0;
  for (std::size_t i = 0; i < t.sets.size(); ++i) {
    const Selection truth = select_treatment_and_timing(t.sets[i]->true_outcomes, eps);
    const Selection pred = select_treatment_and_timing(t.predicted[i], eps);
    const bool arm_ok = std::find(truth.tied_treatments.begin(), truth.tied_treatments.end(), pred.treatment) !=
                        truth.tied_treatments.end();
    bool time_ok = false;
    for (int arm : truth.tied_treatments) {
      const auto& ok = truth.tied_timings[static_cast<std::size_t>(arm)];
      time_ok = time_ok || std::find(ok.begin(), ok.end(), pred.timing) != ok.end();
    }
    ++a.anchors;
    if (arm_ok) {
      ++a.treatment_correct;
      const auto& ok = truth.tied_timings[static_cast<std::size_t>(pred.treatment)];
      if (std::find(ok.begin(), ok.end(), pred.timing) != ok.end()) ++timing_ok_cond;
    }
    if (time_ok) ++timing_ok;
  }
  if (a.anchors == 0) throw ConfigError("selection_accuracy: no anchors");
  a.treatment = 100.0 * static_cast<double>(a.treatment_correct) / static_cast<double>(a.anchors);
  a.timing = 100.0 * static_cast<double>(timing_ok) / static_cast<double>(a.anchors);
  a.timing_conditional =
      a.treatment_correct ? 100.0 * static_cast<double>(timing_ok_cond) / static_cast<double>(a.treatment_correct) : 0.0;
  return a;
}

inline SelectionAccuracy selection_accuracy(const Estimator& m, const std::vector<Trajectory>& data,
                                            const std::vector<BranchSet>& branches, double eps = kTieEpsilon) {
  return selection_accuracy(predict_all(m, data, branches), eps);
}

}  // namespace crn::eval

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crn/error.hpp"
#include "crn/sim/tumor.hpp"

namespace crn::sim {

/// Alternative treatment plans from one anchor and their simulated outcomes
/// Y(t+tau) = V(t+tau).
struct BranchSet {
  std::int64_t patient_id = 0;
  int t = 0;
  int tau = 1;
  std::vector<std::vector<int>> plans;
  std::vector<double> true_outcomes;
};

/// tau == 1: the four single treatments. tau > 1: chemo at step k for
/// k = 0..tau-1, then radio at step k; nothing elsewhere.
inline std::vector<std::vector<int>> counterfactual_plans(int tau) {
  if (tau < 1) throw ConfigError("counterfactual_plans: tau must be >= 1");
  if (tau == 1) return {{kNone}, {kChemo}, {kRadio}, {kBoth}};
  std::vector<std::vector<int>> plans;
  for (int arm : {kChemo, kRadio}) {
    for (int k = 0; k < tau; ++k) {
      std::vector<int> p(static_cast<std::size_t>(tau), kNone);
      p[static_cast<std::size_t>(k)] = arm;
      plans.push_back(std::move(p));
    }
  }
  return plans;
}

inline std::string plan_to_string(const std::vector<int>& plan) {
  std::string s;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (i) s += '-';
    s += std::to_string(plan[i]);
  }
  return s;
}

inline std::vector<int> plan_from_string(const std::string& s) {
  std::vector<int> plan;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t next = s.find('-', pos);
    const std::string tok = s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (tok.size() != 1 || tok[0] < '0' || tok[0] > '3') {
      throw ConfigError("bad treatment plan '" + s + "'");
    }
    plan.push_back(tok[0] - '0');
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return plan;
}

/// Volumes V(t+1..t+tau) when `plan` replaces the treatments from day t on.
/// Uses the same noise sequence as the factual trajectory and ignores death.
inline std::vector<double> rollout(const Trajectory& tr, const PatientParams& params, int t,
                                   const std::vector<int>& plan, const SimConfig& c) {
  if (t < 0 || t >= tr.length()) throw ConfigError("rollout: anchor outside trajectory");
  std::vector<double> out;
  out.reserve(plan.size());
  double v = tr.volume[static_cast<std::size_t>(t)];
  double conc = tr.carried_conc(t);
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const int a = plan[k];
    conc = update_chemo_concentration(conc, has_chemo(a), c.chemo_dose);
    const double dose = has_radio(a) ? c.radio_dose : 0.0;
    v = step_volume(v, conc, dose, params, noise_at(c, tr.patient_id, t + static_cast<int>(k)));
    out.push_back(v);
  }
  return out;
}

inline BranchSet generate_counterfactuals(const Trajectory& tr, int t, int tau, const SimConfig& c) {
  if (!tr.params) throw ConfigError("generate_counterfactuals: trajectory has no simulator parameters");
  BranchSet b;
  b.patient_id = tr.patient_id;
  b.t = t;
  b.tau = tau;
  b.plans = counterfactual_plans(tau);
  for (const auto& plan : b.plans) b.true_outcomes.push_back(rollout(tr, *tr.params, t, plan, c).back());
  return b;
}

/// Branch sets for every anchor t = 0, stride, 2*stride, ... < T of every patient.
inline std::vector<BranchSet> generate_counterfactuals(const std::vector<Trajectory>& data, int tau,
                                                       const SimConfig& c, int stride = 1) {
  if (stride < 1) throw ConfigError("generate_counterfactuals: stride must be >= 1");
  std::vector<BranchSet> out;
  for (const Trajectory& tr : data) {
    for (int t = 0; t < tr.length(); t += stride) out.push_back(generate_counterfactuals(tr, t, tau, c));
  }
  return out;
}

}  // namespace crn::sim

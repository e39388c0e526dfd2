#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crn/error.hpp"
#include "crn/random.hpp"

namespace crn::sim {

using json = nlohmann::json;

enum class PriorFamily { TruncatedNormal, Constant, RatioOfAlphaR };

/// One scalar prior. Truncated normals are truncated below at zero.
struct ParamPrior {
  PriorFamily family = PriorFamily::Constant;
  double mean = 0.0;
  double std = 0.0;
  double divisor = 1.0;  // RatioOfAlphaR only
};

struct StagePrior {
  std::string name;
  double probability = 0.0;
  double log_diameter_mean = 0.0;
  double log_diameter_std = 1.0;
  double min_diameter = 0.0;
  double max_diameter = 0.0;
};

struct PriorConfig {
  ParamPrior rho;
  ParamPrior K;
  ParamPrior beta_c;
  ParamPrior alpha_r;
  ParamPrior beta_r;
  double rho_alpha_r_correlation = 0.0;
  double subgroup_multiplier = 1.1;
  std::vector<StagePrior> stages;

  void validate() const {
    auto check_param = [](const ParamPrior& p, const char* name) {
      if (!(p.std >= 0.0)) throw ConfigError(std::string("priors.") + name + ".std must be >= 0");
      if (p.family == PriorFamily::RatioOfAlphaR && !(p.divisor > 0.0)) {
        throw ConfigError(std::string("priors.") + name + ".divisor must be > 0");
      }
    };
    check_param(rho, "rho");
    check_param(K, "K");
    check_param(beta_c, "beta_c");
    check_param(alpha_r, "alpha_r");
    check_param(beta_r, "beta_r");
    if (K.family != PriorFamily::Constant || !(K.mean > 0.0)) {
      throw ConfigError("priors.K must be a positive constant");
    }
    if (rho.family != PriorFamily::TruncatedNormal || alpha_r.family != PriorFamily::TruncatedNormal ||
        beta_c.family != PriorFamily::TruncatedNormal) {
      throw ConfigError("priors.rho, priors.alpha_r and priors.beta_c must be truncated_normal");
    }
    if (!(std::abs(rho_alpha_r_correlation) < 1.0)) {
      throw ConfigError("priors.rho_alpha_r_correlation must lie in (-1, 1)");
    }
    if (!(subgroup_multiplier > 0.0)) throw ConfigError("priors.subgroup_multiplier must be > 0");
    if (stages.empty()) throw ConfigError("priors.stages must not be empty");
    double total = 0.0;
    for (const StagePrior& s : stages) {
      if (!(s.probability >= 0.0)) throw ConfigError("priors.stages[" + s.name + "].probability < 0");
      if (!(s.log_diameter_std >= 0.0)) {
        throw ConfigError("priors.stages[" + s.name + "].log_diameter_std < 0");
      }
      if (!(s.min_diameter > 0.0 && s.max_diameter > s.min_diameter)) {
        throw ConfigError("priors.stages[" + s.name + "] needs 0 < min_diameter < max_diameter");
      }
      total += s.probability;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("priors.stages probabilities sum to " + std::to_string(total) +
                        ", expected 1");
    }
  }
};

inline ParamPrior param_prior_from_json(const json& j, const char* name) {
  if (!j.is_object()) throw ConfigError(std::string("priors.") + name + " must be an object");
  ParamPrior p;
  const std::string family = j.value("family", "");
  if (family == "truncated_normal") {
    p.family = PriorFamily::TruncatedNormal;
  } else if (family == "constant") {
    p.family = PriorFamily::Constant;
  } else if (family == "ratio_of_alpha_r") {
    p.family = PriorFamily::RatioOfAlphaR;
  } else {
    throw ConfigError(std::string("priors.") + name + ".family: unknown value '" + family + "'");
  }
  p.mean = j.value("mean", 0.0);
  p.std = j.value("std", 0.0);
  p.divisor = j.value("divisor", 1.0);
  return p;
}

inline json param_prior_to_json(const ParamPrior& p) {
  switch (p.family) {
    case PriorFamily::TruncatedNormal:
      return {{"family", "truncated_normal"}, {"mean", p.mean}, {"std", p.std}};
    case PriorFamily::Constant:
      return {{"family", "constant"}, {"mean", p.mean}, {"std", p.std}};
    case PriorFamily::RatioOfAlphaR:
      return {{"family", "ratio_of_alpha_r"}, {"divisor", p.divisor}};
  }
  return {};
}

inline PriorConfig priors_from_json(const json& j) {
  try {
    PriorConfig c;
    c.rho = param_prior_from_json(j.at("rho"), "rho");
    c.K = param_prior_from_json(j.at("K"), "K");
    c.beta_c = param_prior_from_json(j.at("beta_c"), "beta_c");
    c.alpha_r = param_prior_from_json(j.at("alpha_r"), "alpha_r");
    c.beta_r = param_prior_from_json(j.at("beta_r"), "beta_r");
    c.rho_alpha_r_correlation = j.value("rho_alpha_r_correlation", 0.0);
    c.subgroup_multiplier = j.value("subgroup_multiplier", 1.1);
    for (const json& s : j.at("stages")) {
      c.stages.push_back({s.at("name").get<std::string>(), s.at("probability").get<double>(),
                          s.at("log_diameter_mean").get<double>(),
                          s.at("log_diameter_std").get<double>(),
                          s.at("min_diameter").get<double>(), s.at("max_diameter").get<double>()});
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("priors: ") + e.what());
  }
}

inline PriorConfig load_priors(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open priors file '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("priors file '" + path + "': " + e.what());
  }
  return priors_from_json(j);
}

inline json priors_to_json(const PriorConfig& c) {
  json stages = json::array();
  for (const StagePrior& s : c.stages) {
    stages.push_back({{"name", s.name},
                      {"probability", s.probability},
                      {"log_diameter_mean", s.log_diameter_mean},
                      {"log_diameter_std", s.log_diameter_std},
                      {"min_diameter", s.min_diameter},
                      {"max_diameter", s.max_diameter}});
  }
  return {{"rho", param_prior_to_json(c.rho)},
          {"K", param_prior_to_json(c.K)},
          {"beta_c", param_prior_to_json(c.beta_c)},
          {"alpha_r", param_prior_to_json(c.alpha_r)},
          {"beta_r", param_prior_to_json(c.beta_r)},
          {"rho_alpha_r_correlation", c.rho_alpha_r_correlation},
          {"subgroup_multiplier", c.subgroup_multiplier},
          {"stages", stages}};
}

struct PatientParams {
  double rho = 0.0;
  double K = 1.0;
  double beta_c = 0.0;
  double alpha_r = 0.0;
  double beta_r = 0.0;
  int subgroup = 2;  // 1, 2 or 3
};

/// Prior means after the subgroup adjustment: beta_c is scaled for subgroup 3,
/// alpha_r for subgroup 1.
inline double adjusted_beta_c_mean(const PriorConfig& p, int subgroup) {
  return subgroup == 3 ? p.subgroup_multiplier * p.beta_c.mean : p.beta_c.mean;
}
inline double adjusted_alpha_r_mean(const PriorConfig& p, int subgroup) {
  return subgroup == 1 ? p.subgroup_multiplier * p.alpha_r.mean : p.alpha_r.mean;
}

inline double sample_truncated_normal(double mean, double std, Rng& rng) {
  if (std == 0.0) {
    if (mean < 0.0) throw ConfigError("truncated normal with zero std has negative mean");
    return mean;
  }
  for (;;) {
    const double x = mean + std * standard_normal(rng);
    if (x >= 0.0) return x;
  }
}

/// Draws one patient's growth and sensitivity parameters. Negative draws of
/// rho, alpha_r or beta_c are rejected and redrawn.
inline PatientParams sample_patient_params(const PriorConfig& priors, Rng& rng) {
  PatientParams p;
  p.subgroup = 1 + static_cast<int>(uniform_index(rng, 3));
  p.K = priors.K.mean;

  const double mu_a = adjusted_alpha_r_mean(priors, p.subgroup);
  const double sd_a = priors.alpha_r.std;
  const double mu_r = priors.rho.mean;
  const double sd_r = priors.rho.std;
  const double corr = priors.rho_alpha_r_correlation;
  for (;;) {
    const double z1 = standard_normal(rng);
    const double z2 = standard_normal(rng);
    const double a = mu_a + sd_a * z1;
    const double r = mu_r + sd_r * (corr * z1 + std::sqrt(1.0 - corr * corr) * z2);
    if (a >= 0.0 && r >= 0.0) {
      p.alpha_r = a;
      p.rho = r;
      break;
    }
  }
  p.beta_c = sample_truncated_normal(adjusted_beta_c_mean(priors, p.subgroup), priors.beta_c.std, rng);
  switch (priors.beta_r.family) {
    case PriorFamily::RatioOfAlphaR: p.beta_r = p.alpha_r / priors.beta_r.divisor; break;
    case PriorFamily::Constant: p.beta_r = priors.beta_r.mean; break;
    case PriorFamily::TruncatedNormal:
      p.beta_r = sample_truncated_normal(priors.beta_r.mean, priors.beta_r.std, rng);
      break;
  }
  return p;
}

/// Stage index drawn by the stage probabilities, then a truncated log-normal
/// initial diameter (cm).
inline std::pair<std::size_t, double> sample_initial_diameter(const PriorConfig& priors, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t stage = priors.stages.size() - 1;
  for (std::size_t i = 0; i < priors.stages.size(); ++i) {
    acc += priors.stages[i].probability;
    if (u < acc) {
      stage = i;
      break;
    }
  }
  const StagePrior& s = priors.stages[stage];
  const double lo = std::log(s.min_diameter);
  const double hi = std::log(s.max_diameter);
  for (;;) {
    const double x = s.log_diameter_mean + s.log_diameter_std * standard_normal(rng);
    if (x >= lo && x < hi) return {stage, std::exp(x)};
  }
}

}  // namespace crn::sim

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crn/error.hpp"
#include "crn/random.hpp"
#include "crn/sim/priors.hpp"

namespace crn::sim {

/// Combined treatment label; bit 0 is chemotherapy, bit 1 radiotherapy.
enum Treatment : int { kNone = 0, kChemo = 1, kRadio = 2, kBoth = 3 };
inline constexpr int kNumTreatments = 4;

inline bool has_chemo(int a) { return (a & kChemo) != 0; }
inline bool has_radio(int a) { return (a & kRadio) != 0; }
inline int combine_treatment(bool chemo, bool radio) {
  return (chemo ? kChemo : 0) | (radio ? kRadio : 0);
}

inline constexpr double kMaxVolume = 1150.0;  // normalisation constant for RMSE (cm^3)
inline constexpr double kVolumeFloor = 1e-3;  // cm^3

struct SimConfig {
  double gamma_c = 0.0;
  double gamma_r = 0.0;
  int n_patients = 1000;  // training split
  int n_validation = 200;
  int n_test = 200;
  int max_timesteps = 60;
  double noise_std = 0.01;
  double d_max = 13.0;
  std::optional<double> delta_c;  // defaults to d_max / 2
  std::optional<double> delta_r;
  int diameter_window = 15;
  double chemo_dose = 5.0;
  double radio_dose = 2.0;
  std::uint64_t seed = 0;
  PriorConfig priors;

  double effective_delta_c() const { return delta_c.value_or(d_max / 2.0); }
  double effective_delta_r() const { return delta_r.value_or(d_max / 2.0); }

  void validate() const {
    if (!(gamma_c >= 0.0)) throw ConfigError("gamma_c must be >= 0");
    if (!(gamma_r >= 0.0)) throw ConfigError("gamma_r must be >= 0");
    if (n_patients < 0 || n_validation < 0 || n_test < 0) {
      throw ConfigError("n_patients, n_validation and n_test must be >= 0");
    }
    if (max_timesteps <= 0) throw ConfigError("max_timesteps must be > 0");
    if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
    if (!(d_max > 0.0)) throw ConfigError("d_max must be > 0");
    if (diameter_window <= 0) throw ConfigError("diameter_window must be > 0");
    if (!(chemo_dose >= 0.0)) throw ConfigError("chemo_dose must be >= 0");
    if (!(radio_dose >= 0.0)) throw ConfigError("radio_dose must be >= 0");
    priors.validate();
  }
};

inline SimConfig sim_config_from_json(const nlohmann::json& j, const PriorConfig& priors) {
  static const std::array<const char*, 15> known = {
      "gamma_c",  "gamma_r",   "n_patients",      "n_validation", "n_test",
      "max_timesteps", "noise_std", "d_max",     "delta_c",      "delta_r",
      "diameter_window", "chemo_dose", "radio_dose", "seed",     "priors"};
  if (!j.is_object()) throw ConfigError("SimConfig must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) ==
        known.end()) {
      throw ConfigError("SimConfig: unknown field '" + key + "'");
    }
  }
  SimConfig c;
  auto number = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number()) throw ConfigError(std::string("SimConfig: field '") + key + "' must be a number");
    dst = v.get<std::remove_reference_t<decltype(dst)>>();
  };
  number("gamma_c", c.gamma_c);
  number("gamma_r", c.gamma_r);
  number("n_patients", c.n_patients);
  number("n_validation", c.n_validation);
  number("n_test", c.n_test);
  number("max_timesteps", c.max_timesteps);
  number("noise_std", c.noise_std);
  number("d_max", c.d_max);
  number("diameter_window", c.diameter_window);
  number("chemo_dose", c.chemo_dose);
  number("radio_dose", c.radio_dose);
  number("seed", c.seed);
  if (j.contains("delta_c")) {
    double v = 0;
    number("delta_c", v);
    c.delta_c = v;
  }
  if (j.contains("delta_r")) {
    double v = 0;
    number("delta_r", v);
    c.delta_r = v;
  }
  c.priors = priors;
  c.validate();
  return c;
}

inline nlohmann::json sim_config_to_json(const SimConfig& c, bool include_priors = true) {
  nlohmann::json j = {{"gamma_c", c.gamma_c},
                      {"gamma_r", c.gamma_r},
                      {"n_patients", c.n_patients},
                      {"n_validation", c.n_validation},
                      {"n_test", c.n_test},
                      {"max_timesteps", c.max_timesteps},
                      {"noise_std", c.noise_std},
                      {"d_max", c.d_max},
                      {"diameter_window", c.diameter_window},
                      {"chemo_dose", c.chemo_dose},
                      {"radio_dose", c.radio_dose},
                      {"seed", c.seed}};
  if (c.delta_c) j["delta_c"] = *c.delta_c;
  if (c.delta_r) j["delta_r"] = *c.delta_r;
  if (include_priors) j["priors"] = priors_to_json(c.priors);
  return j;
}

// ---------------------------------------------------------------------------
// Model equations

/// V(t+1) = (1 + rho log(K/V) - beta_c C - (alpha_r d + beta_r d^2) + e) V,
/// floored at kVolumeFloor.
inline double step_volume(double volume, double chemo_conc, double radio_dose,
                          const PatientParams& p, double noise) {
  if (!(volume > 0.0)) throw NumericalError("step_volume: volume must be > 0");
  const double growth = p.rho * std::log(p.K / volume);
  const double chemo = p.beta_c * chemo_conc;
  const double radio = p.alpha_r * radio_dose + p.beta_r * radio_dose * radio_dose;
  const double next = (1.0 + growth - chemo - radio + noise) * volume;
  return std::max(next, kVolumeFloor);
}

/// One-day half-life decay plus today's dose.
inline double update_chemo_concentration(double previous, bool dose_given, double dose = 5.0) {
  return (dose_given ? dose : 0.0) + previous / 2.0;
}

inline double diameter_from_volume(double volume) {
  return 2.0 * std::cbrt(3.0 * volume / (4.0 * std::numbers::pi));
}

inline double volume_from_diameter(double diameter) {
  const double r = diameter / 2.0;
  return 4.0 / 3.0 * std::numbers::pi * r * r * r;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct TreatmentProbabilities {
  double chemo = 0.5;
  double radio = 0.5;
};

inline TreatmentProbabilities treatment_probabilities(double mean_diameter, const SimConfig& c) {
  return {sigmoid(c.gamma_c / c.d_max * (mean_diameter - c.effective_delta_c())),
          sigmoid(c.gamma_r / c.d_max * (mean_diameter - c.effective_delta_r()))};
}

// ---------------------------------------------------------------------------
// Trajectories

/// One patient. volume has length T+1: volume[t] is V at day t and
/// volume[t+1] the outcome of the treatment given at t. chemo_conc[t] is the
/// concentration at day t including that day's dose.
struct Trajectory {
  std::int64_t patient_id = 0;
  int subgroup = 2;
  std::vector<double> volume;
  std::vector<double> chemo_conc;
  std::vector<int> treatment;
  std::optional<PatientParams> params;  // known for simulated data only

  int length() const { return static_cast<int>(treatment.size()); }
  double outcome(int t) const { return volume[static_cast<std::size_t>(t) + 1]; }
  /// Concentration carried into day t before that day's dose.
  double carried_conc(int t) const { return t == 0 ? 0.0 : chemo_conc[static_cast<std::size_t>(t) - 1]; }
};

enum class Split : int { Train = 0, Validation = 1, Test = 2 };

/// Patient ids of distinct splits never overlap, so their random streams are disjoint.
inline std::int64_t split_id_offset(Split s) { return static_cast<std::int64_t>(s) * 1'000'000'000LL; }

namespace stream {
inline constexpr std::uint64_t kParams = 1;
inline constexpr std::uint64_t kNoise = 2;
inline constexpr std::uint64_t kChemo = 3;
inline constexpr std::uint64_t kRadio = 4;
}  // namespace stream

/// e_t for (seed, patient, day); addressable so counterfactual rollouts reuse it.
inline double noise_at(const SimConfig& c, std::int64_t patient_id, int t) {
  if (c.noise_std == 0.0) return 0.0;
  return c.noise_std * counter_normal(stream_key({c.seed, static_cast<std::uint64_t>(patient_id),
                                                  static_cast<std::uint64_t>(t), stream::kNoise}));
}

/// Mean diameter over the most recent `window` days up to and including t.
inline double mean_recent_diameter(const std::vector<double>& volume, int t, int window) {
  const int begin = std::max(0, t - window + 1);
  double s = 0.0;
  for (int k = begin; k <= t; ++k) s += diameter_from_volume(volume[static_cast<std::size_t>(k)]);
  return s / static_cast<double>(t - begin + 1);
}

/// Simulates one patient until max_timesteps or until the diameter reaches d_max.
inline Trajectory simulate_patient(const SimConfig& c, std::int64_t patient_id) {
  Rng rng = make_rng({c.seed, static_cast<std::uint64_t>(patient_id), stream::kParams});
  Trajectory tr;
  tr.patient_id = patient_id;
  PatientParams params = sample_patient_params(c.priors, rng);
  const auto [stage, diameter] = sample_initial_diameter(c.priors, rng);
  (void)stage;
  tr.subgroup = params.subgroup;
  tr.params = params;
  tr.volume.push_back(volume_from_diameter(diameter));

  double conc = 0.0;
  const auto pid = static_cast<std::uint64_t>(patient_id);
  for (int t = 0; t < c.max_timesteps; ++t) {
    const double dbar = mean_recent_diameter(tr.volume, t, c.diameter_window);
    const TreatmentProbabilities p = treatment_probabilities(dbar, c);
    const auto ut = static_cast<std::uint64_t>(t);
    const bool chemo = counter_uniform(stream_key({c.seed, pid, ut, stream::kChemo})) < p.chemo;
    const bool radio = counter_uniform(stream_key({c.seed, pid, ut, stream::kRadio})) < p.radio;
    conc = update_chemo_concentration(conc, chemo, c.chemo_dose);
    const double dose = radio ? c.radio_dose : 0.0;
    const double next = step_volume(tr.volume.back(), conc, dose, params, noise_at(c, patient_id, t));
    tr.treatment.push_back(combine_treatment(chemo, radio));
    tr.chemo_conc.push_back(conc);
    tr.volume.push_back(next);
    if (diameter_from_volume(next) >= c.d_max) break;
  }
  return tr;
}

inline std::vector<Trajectory> simulate_dataset(const SimConfig& c, Split split, int n) {
  c.validate();
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(n));
  const std::int64_t offset = split_id_offset(split);
  for (int i = 0; i < n; ++i) out.push_back(simulate_patient(c, offset + i));
  return out;
}

inline std::vector<Trajectory> simulate_dataset(const SimConfig& c, Split split = Split::Train) {
  const int n = split == Split::Train        ? c.n_patients
                : split == Split::Validation ? c.n_validation
                                             : c.n_test;
  return simulate_dataset(c, split, n);
}

}  // namespace crn::sim

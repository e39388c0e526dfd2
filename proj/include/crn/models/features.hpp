#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "json.hpp"

#include "crn/autodiff.hpp"
#include "crn/error.hpp"
#include "crn/sim/tumor.hpp"

namespace crn::models {

using sim::Trajectory;
using Tensor = ad::Tensor;

inline constexpr std::size_t kCovariates = 2;   // volume, carried chemo concentration
inline constexpr std::size_t kTreatments = 4;
inline constexpr std::size_t kStatic = 3;       // subgroup one-hot

/// Training-set z-score statistics and the outcome target scale.
struct Standardizer {
  double volume_mean = 0.0;
  double volume_std = 1.0;
  double conc_mean = 0.0;
  double conc_std = 1.0;
  double outcome_scale = sim::kMaxVolume;

  static Standardizer fit(const std::vector<Trajectory>& data, double outcome_scale = sim::kMaxVolume) {
    double n = 0, sv = 0, svv = 0, sc = 0, scc = 0;
    for (const Trajectory& tr : data) {
      for (int t = 0; t < tr.length(); ++t) {
        const double v = tr.volume[static_cast<std::size_t>(t)];
        const double c = tr.carried_conc(t);
        n += 1;
        sv += v;
        svv += v * v;
        sc += c;
        scc += c * c;
      }
    }
    if (n == 0) throw ConfigError("Standardizer: empty dataset");
    if (!(outcome_scale > 0.0)) throw ConfigError("Standardizer: outcome_scale must be > 0");
    Standardizer s;
    s.volume_mean = sv / n;
    s.conc_mean = sc / n;
    s.volume_std = std::sqrt(std::max(svv / n - s.volume_mean * s.volume_mean, 0.0));
    s.conc_std = std::sqrt(std::max(scc / n - s.conc_mean * s.conc_mean, 0.0));
    if (s.volume_std < 1e-12) s.volume_std = 1.0;
    if (s.conc_std < 1e-12) s.conc_std = 1.0;
    s.outcome_scale = outcome_scale;
    return s;
  }

  double z_volume(double v) const { return (v - volume_mean) / volume_std; }
  double z_conc(double c) const { return (c - conc_mean) / conc_std; }
  double target(double v) const { return v / outcome_scale; }
  double volume(double target) const { return target * outcome_scale; }

  nlohmann::json to_json() const {
    return {{"volume_mean", volume_mean}, {"volume_std", volume_std}, {"conc_mean", conc_mean},
            {"conc_std", conc_std},       {"outcome_scale", outcome_scale}};
  }
  static Standardizer from_json(const nlohmann::json& j) {
    Standardizer s;
    s.volume_mean = j.at("volume_mean").get<double>();
    s.volume_std = j.at("volume_std").get<double>();
    s.conc_mean = j.at("conc_mean").get<double>();
    s.conc_std = j.at("conc_std").get<double>();
    s.outcome_scale = j.at("outcome_scale").get<double>();
    return s;
  }
};

inline int previous_treatment(const Trajectory& tr, int t) {
  return t == 0 ? sim::kNone : tr.treatment[static_cast<std::size_t>(t) - 1];
}

/// Padded, time-major view of a minibatch of patients. Row t*B + b of the
/// stacked tensors refers to patient b at day t.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<Tensor> inputs;         // per step: B x in
  Tensor mask;                        // (T*B) x 1
  Tensor treatment_onehot;            // (T*B) x 4, zero rows on padding
  Tensor target;                      // (T*B) x 1
  std::vector<int> treatment;         // T*B, -1 on padding
  std::size_t valid = 0;
};

enum class InputLayout {
  History,                 // [X_t, A_{t-1}, V]
  HistoryAndCurrent,       // [X_t, A_{t-1}, A_t, V]
  TreatmentsOnly,          // [A_{t-1}]
};

inline std::size_t input_width(InputLayout layout) {
  switch (layout) {
    case InputLayout::History: return kCovariates + kTreatments + kStatic;
    case InputLayout::HistoryAndCurrent: return kCovariates + 2 * kTreatments + kStatic;
    case InputLayout::TreatmentsOnly: return kTreatments;
  }
  return 0;
}

/// Encoder-side features of one patient-day.
inline void write_features(const Trajectory& tr, int t, const Standardizer& s, InputLayout layout,
                           double* out) {
  std::size_t k = 0;
  if (layout != InputLayout::TreatmentsOnly) {
    out[k++] = s.z_volume(tr.volume[static_cast<std::size_t>(t)]);
    out[k++] = s.z_conc(tr.carried_conc(t));
  }
  for (std::size_t j = 0; j < kTreatments; ++j) out[k + j] = 0.0;
  out[k + static_cast<std::size_t>(previous_treatment(tr, t))] = 1.0;
  k += kTreatments;
  if (layout == InputLayout::TreatmentsOnly) return;
  if (layout == InputLayout::HistoryAndCurrent) {
    for (std::size_t j = 0; j < kTreatments; ++j) out[k + j] = 0.0;
    out[k + static_cast<std::size_t>(tr.treatment[static_cast<std::size_t>(t)])] = 1.0;
    k += kTreatments;
  }
  for (std::size_t j = 0; j < kStatic; ++j) out[k + j] = 0.0;
  out[k + static_cast<std::size_t>(tr.subgroup - 1)] = 1.0;
}

/// `max_steps` > 0 truncates every sequence to its first max_steps days.
inline SequenceBatch make_sequence_batch(const std::vector<const Trajectory*>& patients,
                                         const Standardizer& s, InputLayout layout,
                                         std::size_t max_steps = 0) {
  if (patients.empty()) throw ConfigError("make_sequence_batch: empty batch");
  SequenceBatch b;
  b.batch = patients.size();
  for (const Trajectory* tr : patients) {
    if (tr->length() < 1) throw ConfigError("make_sequence_batch: empty sequence");
    b.steps = std::max(b.steps, static_cast<std::size_t>(tr->length()));
  }
  if (max_steps > 0) b.steps = std::min(b.steps, max_steps);
  const std::size_t width = input_width(layout);
  const std::size_t rows = b.steps * b.batch;
  b.mask = Tensor::matrix(rows, 1);
  b.treatment_onehot = Tensor::matrix(rows, kTreatments);
  b.target = Tensor::matrix(rows, 1);
  b.treatment.assign(rows, -1);
  for (std::size_t t = 0; t < b.steps; ++t) {
    Tensor x = Tensor::matrix(b.batch, width);
    for (std::size_t i = 0; i < b.batch; ++i) {
      const Trajectory& tr = *patients[i];
      if (static_cast<int>(t) >= tr.length()) continue;
      const int ti = static_cast<int>(t);
      write_features(tr, ti, s, layout, &x.data()[i * width]);
      const std::size_t r = t * b.batch + i;
      b.mask[r] = 1.0;
      const int a = tr.treatment[t];
      b.treatment[r] = a;
      b.treatment_onehot(r, static_cast<std::size_t>(a)) = 1.0;
      b.target[r] = s.target(tr.outcome(ti));
      ++b.valid;
    }
    b.inputs.push_back(std::move(x));
  }
  return b;
}

}  // namespace crn::models

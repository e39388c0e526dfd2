#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "crn/autodiff.hpp"
#include "crn/models/features.hpp"
#include "crn/models/layers.hpp"

namespace crn::models {

struct CrnHyper {
  std::size_t hidden = 18;   // encoder LSTM state
  std::size_t repr = 18;     // balancing representation R
  std::size_t fc = 18;       // hidden width of G_y and G_a
  double dropout = 0.1;

  nlohmann::json to_json() const {
    return {{"hidden", hidden}, {"repr", repr}, {"fc", fc}, {"dropout", dropout}};
  }
  static CrnHyper from_json(const nlohmann::json& j) {
    CrnHyper h;
    h.hidden = j.at("hidden").get<std::size_t>();
    h.repr = j.at("repr").get<std::size_t>();
    h.fc = j.at("fc").get<std::size_t>();
    h.dropout = j.at("dropout").get<double>();
    return h;
  }
  void validate() const {
    if (hidden == 0 || repr == 0 || fc == 0) throw ConfigError("hidden, repr and fc must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  }
};

/// Outputs of a forward pass, stacked time-major (row t*B + b).
struct HeadOutputs {
  Var phi;
  Var outcome;
  Var probs;
};

template <typename PS>
Var outcome_head(Tape& tape, PS& ps, const std::string& prefix, const Var& phi, const Var& treatment) {
  const Var h = ad::elu(dense(tape, ps, prefix + ".gy.h", ad::concat({phi, treatment})));
  return dense(tape, ps, prefix + ".gy.out", h);
}

/// G_a sees phi through the gradient-reversal operator.
template <typename PS>
Var treatment_head(Tape& tape, PS& ps, const std::string& prefix, const Var& phi, double lambda) {
  const Var h = ad::elu(dense(tape, ps, prefix + ".ga.h", ad::gradient_reversal(phi, lambda)));
  return ad::softmax(dense(tape, ps, prefix + ".ga.out", h));
}

/// Encoder: LSTM over [X_t, A_{t-1}, V], representation phi_t = ELU(FC(h_t)),
/// outcome head G_y(phi_t, A_t) and treatment head G_a(GRL(phi_t)).
class CrnEncoder {
 public:
  CrnHyper hp;
  Standardizer stats;
  ParameterSet params;

  CrnEncoder() = default;
  CrnEncoder(const CrnHyper& h, const Standardizer& s, std::uint64_t seed) : hp(h), stats(s) {
    hp.validate();
    Rng rng = make_rng({seed, 0xe4c});
    add_lstm(params, "enc.lstm", input_width(InputLayout::History), hp.hidden, rng);
    add_dense(params, "enc.phi", hp.hidden, hp.repr, rng);
    add_dense(params, "enc.gy.h", hp.repr + kTreatments, hp.fc, rng);
    add_dense(params, "enc.gy.out", hp.fc, 1, rng);
    add_dense(params, "enc.ga.h", hp.repr, hp.fc, rng);
    add_dense(params, "enc.ga.out", hp.fc, kTreatments, rng);
  }

  /// Representations for every step, stacked. `dropout_rng` enables
  /// variational dropout on the recurrent state.
  template <typename PS>
  static Var representations(Tape& tape, PS& ps, const CrnHyper& hp, const SequenceBatch& b,
                             Rng* dropout_rng) {
    Tensor mask;
    if (dropout_rng != nullptr && hp.dropout > 0.0) {
      mask = ad::variational_dropout_mask(b.batch, hp.hidden, hp.dropout, *dropout_rng);
    }
    LstmState s = zero_state(tape, b.batch, hp.hidden);
    std::vector<Var> hs;
    hs.reserve(b.steps);
    for (std::size_t t = 0; t < b.steps; ++t) {
      s = lstm_step(tape, ps, "enc.lstm", tape.constant(b.inputs[t]), s, mask);
      hs.push_back(s.h);
    }
    return ad::elu(dense(tape, ps, "enc.phi", ad::stack_rows(hs)));
  }

  template <typename PS>
  static HeadOutputs forward(Tape& tape, PS& ps, const CrnHyper& hp, const SequenceBatch& b,
                             double lambda, Rng* dropout_rng) {
    HeadOutputs out;
    out.phi = representations(tape, ps, hp, b, dropout_rng);
    out.outcome = outcome_head(tape, ps, "enc", out.phi, tape.constant(b.treatment_onehot));
    out.probs = treatment_head(tape, ps, "enc", out.phi, lambda);
    return out;
  }

  /// T x R representation matrix of one patient (dropout off).
  Tensor representation_matrix(const Trajectory& tr) const {
    Tape tape(false);
    const SequenceBatch b = make_sequence_batch({&tr}, stats, InputLayout::History);
    return representations(tape, params, hp, b, nullptr).value();
  }

  /// Representations of several patients at once; result[i] is T_i x R.
  std::vector<Tensor> representation_matrices(const std::vector<const Trajectory*>& patients,
                                              std::size_t chunk = 256) const {
    std::vector<Tensor> out;
    for (std::size_t lo = 0; lo < patients.size(); lo += chunk) {
      const std::size_t hi = std::min(patients.size(), lo + chunk);
      std::vector<const Trajectory*> part(patients.begin() + static_cast<std::ptrdiff_t>(lo),
                                          patients.begin() + static_cast<std::ptrdiff_t>(hi));
      Tape tape(false);
      const SequenceBatch b = make_sequence_batch(part, stats, InputLayout::History);
      const Tensor phi = representations(tape, params, hp, b, nullptr).value();
      for (std::size_t i = 0; i < part.size(); ++i) {
        const auto len = static_cast<std::size_t>(part[i]->length());
        Tensor m = Tensor::matrix(len, hp.repr);
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t j = 0; j < hp.repr; ++j) m(t, j) = phi(t * part.size() + i, j);
        out.push_back(std::move(m));
      }
    }
    return out;
  }

  /// Predicted volumes from representation rows under the given treatments.
  std::vector<double> predict_from_repr(const Tensor& phi, const std::vector<int>& treatments) const {
    Tape tape(false);
    const Var y = outcome_head(tape, params, "enc", tape.constant(phi),
                               tape.constant(one_hot(treatments, kTreatments)));
    std::vector<double> out(treatments.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stats.volume(y.value()[i]);
    return out;
  }

  /// Treatment-classifier probabilities from representation rows.
  Tensor classifier_probs(const Tensor& phi) const {
    Tape tape(false);
    return treatment_head(tape, params, "enc", tape.constant(phi), 0.0).value();
  }

  nlohmann::json to_json() const {
    return {{"hyper", hp.to_json()}, {"stats", stats.to_json()}, {"params", ad::parameters_to_json(params)}};
  }
  static CrnEncoder from_json(const nlohmann::json& j) {
    CrnEncoder e(CrnHyper::from_json(j.at("hyper")), Standardizer::from_json(j.at("stats")), 0);
    ad::parameters_from_json(j.at("params"), e.params);
    return e;
  }
};

inline constexpr std::size_t kDecoderInput = 1 + kTreatments + kStatic;

/// One teacher-forced decoder sequence set: rows are windows.
struct DecoderBatch {
  Tensor init;                         // N x R encoder representation at the anchor
  std::vector<Tensor> inputs;          // per step: N x (1 + 4 + 3) = [z(prev volume), A_prev, V]
  std::vector<Tensor> current;         // per step: N x 4 one-hot of the treatment being scored
  Tensor target;                       // (tau*N) x 1, time-major
  std::vector<int> treatment;          // tau*N
  Tensor treatment_onehot;             // (tau*N) x 4
  Tensor weight;                       // (tau*N) x 1, per-row loss weight
  std::size_t rows() const { return init.rows(); }
  std::size_t steps() const { return inputs.size(); }
};

/// Decoder: LSTM with state size R initialised (h and c) from the encoder
/// representation, its own representation head and G_y / G_a heads.
class CrnDecoder {
 public:
  CrnHyper hp;  // hp.hidden is forced to the encoder's R
  Standardizer stats;
  ParameterSet params;

  CrnDecoder() = default;
  CrnDecoder(const CrnHyper& h, std::size_t encoder_repr, const Standardizer& s, std::uint64_t seed)
      : hp(h), stats(s) {
    hp.hidden = encoder_repr;
    hp.validate();
    Rng rng = make_rng({seed, 0xdec});
    add_lstm(params, "dec.lstm", kDecoderInput, hp.hidden, rng);
    add_dense(params, "dec.phi", hp.hidden, hp.repr, rng);
    add_dense(params, "dec.gy.h", hp.repr + kTreatments, hp.fc, rng);
    add_dense(params, "dec.gy.out", hp.fc, 1, rng);
    add_dense(params, "dec.ga.h", hp.repr, hp.fc, rng);
    add_dense(params, "dec.ga.out", hp.fc, kTreatments, rng);
  }

  template <typename PS>
  static HeadOutputs forward(Tape& tape, PS& ps, const CrnHyper& hp, const DecoderBatch& b, double lambda,
                             Rng* dropout_rng) {
    if (b.steps() == 0) throw ConfigError("decoder: tau must be >= 1");
    Tensor mask;
    if (dropout_rng != nullptr && hp.dropout > 0.0) {
      mask = ad::variational_dropout_mask(b.rows(), hp.hidden, hp.dropout, *dropout_rng);
    }
    const Var init = tape.constant(b.init);
    LstmState s{init, init};
    std::vector<Var> hs;
    std::vector<Var> cur;
    for (std::size_t k = 0; k < b.steps(); ++k) {
      s = lstm_step(tape, ps, "dec.lstm", tape.constant(b.inputs[k]), s, mask);
      hs.push_back(s.h);
      cur.push_back(tape.constant(b.current[k]));
    }
    HeadOutputs out;
    out.phi = ad::elu(dense(tape, ps, "dec.phi", ad::stack_rows(hs)));
    out.outcome = outcome_head(tape, ps, "dec", out.phi, ad::stack_rows(cur));
    out.probs = treatment_head(tape, ps, "dec", out.phi, lambda);
    return out;
  }

  /// Autoregressive rollout. Row i starts from representation init(i),
  /// observed volume start_volume[i] and factual previous treatment
  /// prev_treatment[i]; plans[i] holds the tau planned treatments. Returns
  /// predicted volumes, one vector of length tau per row.
  std::vector<std::vector<double>> predict(const Tensor& init, const std::vector<double>& start_volume,
                                           const std::vector<int>& prev_treatment,
                                           const std::vector<int>& subgroup,
                                           const std::vector<std::vector<int>>& plans) const {
    const std::size_t n = init.rows();
    if (n == 0) return {};
    const std::size_t tau = plans.front().size();
    if (tau == 0) throw ConfigError("decoder: tau must be >= 1");
    std::vector<std::vector<double>> out(n, std::vector<double>(tau));
    Tape tape(false);
    const Var h0 = tape.constant(init);
    LstmState s{h0, h0};
    std::vector<double> prev_volume = start_volume;
    std::vector<int> prev_a = prev_treatment;
    for (std::size_t k = 0; k < tau; ++k) {
      Tensor x = Tensor::matrix(n, kDecoderInput);
      std::vector<int> cur(n);
      for (std::size_t i = 0; i < n; ++i) {
        x(i, 0) = stats.z_volume(prev_volume[i]);
        x(i, 1 + static_cast<std::size_t>(prev_a[i])) = 1.0;
        x(i, 1 + kTreatments + static_cast<std::size_t>(subgroup[i] - 1)) = 1.0;
        cur[i] = plans[i][k];
      }
      s = lstm_step(tape, params, "dec.lstm", tape.constant(std::move(x)), s);
      const Var phi = ad::elu(dense(tape, params, "dec.phi", s.h));
      const Var y = outcome_head(tape, params, "dec", phi, tape.constant(one_hot(cur, kTreatments)));
      for (std::size_t i = 0; i < n; ++i) {
        const double v = stats.volume(y.value()[i]);
        out[i][k] = v;
        prev_volume[i] = v;
        prev_a[i] = cur[i];
      }
    }
    return out;
  }

  nlohmann::json to_json() const {
    return {{"hyper", hp.to_json()}, {"stats", stats.to_json()}, {"params", ad::parameters_to_json(params)}};
  }
  static CrnDecoder from_json(const nlohmann::json& j) {
    const CrnHyper h = CrnHyper::from_json(j.at("hyper"));
    CrnDecoder d(h, h.hidden, Standardizer::from_json(j.at("stats")), 0);
    ad::parameters_from_json(j.at("params"), d.params);
    return d;
  }
};

}  // namespace crn::models

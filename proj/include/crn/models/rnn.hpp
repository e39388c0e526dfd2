#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "crn/autodiff.hpp"
#include "crn/models/features.hpp"
#include "crn/models/layers.hpp"

namespace crn::models {

struct RnnHyper {
  std::size_t hidden = 18;
  std::size_t fc = 18;
  double dropout = 0.1;

  nlohmann::json to_json() const { return {{"hidden", hidden}, {"fc", fc}, {"dropout", dropout}}; }
  static RnnHyper from_json(const nlohmann::json& j) {
    RnnHyper h;
    h.hidden = j.at("hidden").get<std::size_t>();
    h.fc = j.at("fc").get<std::size_t>();
    h.dropout = j.at("dropout").get<double>();
    return h;
  }
  void validate() const {
    if (hidden == 0 || fc == 0) throw ConfigError("hidden and fc must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  }
};

/// LSTM over a feature layout followed by an ELU layer and a linear output
/// of width `outputs`. With InputLayout::HistoryAndCurrent and one output it
/// is the one-step baseline RNN (and the RMSN encoder); with two outputs it
/// serves as a propensity network over (chemo, radio) logits.
class SequenceRegressor {
 public:
  std::string prefix = "rnn";
  InputLayout layout = InputLayout::HistoryAndCurrent;
  std::size_t outputs = 1;
  RnnHyper hp;
  Standardizer stats;
  ParameterSet params;

  SequenceRegressor() = default;
  SequenceRegressor(std::string name, InputLayout l, std::size_t n_out, const RnnHyper& h,
                    const Standardizer& s, std::uint64_t seed)
      : prefix(std::move(name)), layout(l), outputs(n_out), hp(h), stats(s) {
    hp.validate();
    Rng rng = make_rng({seed, name_key(prefix)});
    add_lstm(params, prefix + ".lstm", input_width(layout), hp.hidden, rng);
    add_dense(params, prefix + ".fc", hp.hidden, hp.fc, rng);
    add_dense(params, prefix + ".out", hp.fc, outputs, rng);
  }

  template <typename PS>
  Var head(Tape& tape, PS& ps, const Var& h) const {
    return dense(tape, ps, prefix + ".out", ad::elu(dense(tape, ps, prefix + ".fc", h)));
  }

  /// Hidden and cell states after every step (time-major lists).
  template <typename PS>
  std::vector<LstmState> states(Tape& tape, PS& ps, const SequenceBatch& b, Rng* dropout_rng) const {
    Tensor mask;
    if (dropout_rng != nullptr && hp.dropout > 0.0) {
      mask = ad::variational_dropout_mask(b.batch, hp.hidden, hp.dropout, *dropout_rng);
    }
    LstmState s = zero_state(tape, b.batch, hp.hidden);
    std::vector<LstmState> out;
    out.reserve(b.steps);
    for (std::size_t t = 0; t < b.steps; ++t) {
      s = lstm_step(tape, ps, prefix + ".lstm", tape.constant(b.inputs[t]), s, mask);
      out.push_back(s);
    }
    return out;
  }

  /// Stacked (T*B) x outputs predictions.
  template <typename PS>
  Var forward(Tape& tape, PS& ps, const SequenceBatch& b, Rng* dropout_rng) const {
    std::vector<Var> hs;
    for (const LstmState& s : states(tape, ps, b, dropout_rng)) hs.push_back(s.h);
    return head(tape, ps, ad::stack_rows(hs));
  }

  Var forward(Tape& tape, const SequenceBatch& b, Rng* dropout_rng) {
    return forward(tape, params, b, dropout_rng);
  }

  /// Inference-only step from an explicit state with explicit inputs.
  struct StepResult {
    Tensor output;
    Tensor h;
    Tensor c;
  };
  StepResult step(const Tensor& x, const Tensor& h, const Tensor& c) const {
    Tape tape(false);
    const LstmState s = lstm_step(tape, params, prefix + ".lstm", tape.constant(x),
                                  LstmState{tape.constant(h), tape.constant(c)});
    return {head(tape, params, s.h).value(), s.h.value(), s.c.value()};
  }

  nlohmann::json to_json() const {
    return {{"prefix", prefix},
            {"layout", static_cast<int>(layout)},
            {"outputs", outputs},
            {"hyper", hp.to_json()},
            {"stats", stats.to_json()},
            {"params", ad::parameters_to_json(params)}};
  }
  static SequenceRegressor from_json(const nlohmann::json& j) {
    SequenceRegressor m(j.at("prefix").get<std::string>(), static_cast<InputLayout>(j.at("layout").get<int>()),
                        j.at("outputs").get<std::size_t>(), RnnHyper::from_json(j.at("hyper")),
                        Standardizer::from_json(j.at("stats")), 0);
    ad::parameters_from_json(j.at("params"), m.params);
    return m;
  }
};

/// Predicts V_{t+1} for each (t, treatment) query of one patient with a
/// one-step regressor whose input includes the current treatment. States up to
/// t-1 are factual; only day t's input is replaced.
inline std::vector<double> one_step_counterfactuals(const SequenceRegressor& m, const Trajectory& tr,
                                                    const std::vector<std::pair<int, int>>& queries) {
  if (m.layout != InputLayout::HistoryAndCurrent) {
    throw ConfigError("one_step_counterfactuals: regressor does not take the current treatment");
  }
  Tape tape(false);
  const SequenceBatch b = make_sequence_batch({&tr}, m.stats, m.layout);
  const std::vector<LstmState> st = m.states(tape, m.params, b, nullptr);
  const std::size_t n = queries.size();
  const std::size_t width = input_width(m.layout);
  Tensor x = Tensor::matrix(n, width);
  Tensor h = Tensor::matrix(n, m.hp.hidden);
  Tensor c = Tensor::matrix(n, m.hp.hidden);
  for (std::size_t q = 0; q < n; ++q) {
    const auto [t, a] = queries[q];
    write_features(tr, t, m.stats, m.layout, &x.data()[q * width]);
    const std::size_t cur = kCovariates + kTreatments;
    for (std::size_t j = 0; j < kTreatments; ++j) x(q, cur + j) = 0.0;
    x(q, cur + static_cast<std::size_t>(a)) = 1.0;
    if (t > 0) {
      const Tensor& hv = st[static_cast<std::size_t>(t) - 1].h.value();
      const Tensor& cv = st[static_cast<std::size_t>(t) - 1].c.value();
      for (std::size_t j = 0; j < m.hp.hidden; ++j) {
        h(q, j) = hv[j];
        c(q, j) = cv[j];
      }
    }
  }
  const auto r = m.step(x, h, c);
  std::vector<double> out(n);
  for (std::size_t q = 0; q < n; ++q) out[q] = m.stats.volume(r.output[q]);
  return out;
}

}  // namespace crn::models

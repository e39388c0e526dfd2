#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "crn/models/linear.hpp"
#include "crn/models/rnn.hpp"
#include "crn/train/engine.hpp"

namespace crn::train {

using ad::ParameterSet;
using models::InputLayout;
using models::LstmState;
using models::RnnHyper;
using models::SequenceBatch;
using models::SequenceRegressor;

/// Sum over (row, treatment bit) of the Bernoulli negative log-likelihood of
/// two logits per row (chemo, radio), masked rows skipped.
inline Var bernoulli_nll(const Var& logits, const std::vector<int>& treatment) {
  const std::size_t rows = logits.rows();
  Tensor pos = Tensor::matrix(rows, 2), neg = Tensor::matrix(rows, 2);
  for (std::size_t r = 0; r < rows; ++r) {
    const int a = treatment[r];
    if (a < 0) continue;
    const bool c = sim::has_chemo(a), x = sim::has_radio(a);
    pos(r, 0) = c ? 1.0 : 0.0;
    neg(r, 0) = c ? 0.0 : 1.0;
    pos(r, 1) = x ? 1.0 : 0.0;
    neg(r, 1) = x ? 0.0 : 1.0;
  }
  const Var lp = ad::masked_sum(ad::log(ad::sigmoid(logits)), pos);
  const Var ln = ad::masked_sum(ad::log(ad::sigmoid(ad::scale(logits, -1.0))), neg);
  return ad::scale(ad::add(lp, ln), -1.0);
}

/// P(chemo), P(radio) per day from a 2-logit propensity network.
inline std::vector<std::array<double, 2>> propensity_probs(const SequenceRegressor& m, const Trajectory& tr) {
  Tape tape(false);
  const SequenceBatch b = models::make_sequence_batch({&tr}, m.stats, m.layout);
  const Tensor z = m.forward(tape, m.params, b, nullptr).value();
  std::vector<std::array<double, 2>> p(static_cast<std::size_t>(tr.length()));
  for (std::size_t t = 0; t < p.size(); ++t) p[t] = {models::logistic(z(t, 0)), models::logistic(z(t, 1))};
  return p;
}

inline RnnResult train_propensity(const std::vector<Trajectory>& train, const std::vector<Trajectory>& validation,
                                  const std::string& prefix, InputLayout layout, const RnnHyper& hp,
                                  const TrainConfig& cfg) {
  RnnResult r;
  r.model = SequenceRegressor(prefix, layout, 2, hp, Standardizer::fit(train, cfg.outcome_scale), cfg.seed);
  SequenceRegressor& m = r.model;
  const auto tr = pointers(train);
  const auto va = pointers(validation);
  auto loss = [&](Tape& tape, const std::vector<std::size_t>& idx, double, Rng& rng) {
    const SequenceBatch b = models::make_sequence_batch(pick(tr, idx), m.stats, m.layout);
    BatchLoss l;
    l.outcome = ad::scale(bernoulli_nll(m.forward(tape, m.params, b, &rng), b.treatment), 1.0 / static_cast<double>(b.valid));
    return l;
  };
  std::function<double()> val;
  if (!va.empty()) {
    val = [&] {
      double s = 0.0, n = 0.0;
      for (std::size_t lo = 0; lo < va.size(); lo += 256) {
        std::vector<const Trajectory*> part(va.begin() + static_cast<std::ptrdiff_t>(lo),
                                            va.begin() + static_cast<std::ptrdiff_t>(std::min(va.size(), lo + 256)));
        Tape tape(false);
        const SequenceBatch b = models::make_sequence_batch(part, m.stats, m.layout);
        s += bernoulli_nll(m.forward(tape, m.params, b, nullptr), b.treatment).value().item();
        n += static_cast<double>(b.valid);
      }
      return s / n;
    };
  }
  r.loop = run_minibatch_loop(m.params, tr.size(), cfg, loss, val, prefix);
  return r;
}

/// RMSN decoder: LSTM whose state starts from the encoder state after day t
/// (which already consumed the planned A_t). Step k >= 1 reads
/// [z(V_{t+k}), A_{t+k}, V] and predicts V_{t+k+1}.
class RmsnDecoder {
 public:
  static constexpr std::size_t kInput = 1 + models::kTreatments + models::kStatic;
  RnnHyper hp;
  Standardizer stats;
  ParameterSet params;

  RmsnDecoder() = default;
  RmsnDecoder(const RnnHyper& h, const Standardizer& s, std::uint64_t seed) : hp(h), stats(s) {
    hp.validate();
    Rng rng = make_rng({seed, models::name_key("rmsn.dec")});
    models::add_lstm(params, "rmsn.dec.lstm", kInput, hp.hidden, rng);
    models::add_dense(params, "rmsn.dec.fc", hp.hidden, hp.fc, rng);
    models::add_dense(params, "rmsn.dec.out", hp.fc, 1, rng);
  }

  static void write_input(double* row, const Standardizer& s, double volume, int a, int subgroup) {
    for (std::size_t j = 0; j < kInput; ++j) row[j] = 0.0;
    row[0] = s.z_volume(volume);
    row[1 + static_cast<std::size_t>(a)] = 1.0;
    row[1 + models::kTreatments + static_cast<std::size_t>(subgroup - 1)] = 1.0;
  }

  /// Teacher-forced: inputs[k] is N x kInput; returns stacked (steps*N) x 1.
  template <typename PS>
  static Var forward(Tape& tape, PS& ps, const RnnHyper& hp, const Tensor& h0, const Tensor& c0,
                     const std::vector<Tensor>& inputs, Rng* dropout_rng) {
    Tensor mask;
    if (dropout_rng != nullptr && hp.dropout > 0.0)
      mask = ad::variational_dropout_mask(h0.rows(), hp.hidden, hp.dropout, *dropout_rng);
    LstmState s{tape.constant(h0), tape.constant(c0)};
    std::vector<Var> hs;
    for (const Tensor& x : inputs) {
      s = models::lstm_step(tape, ps, "rmsn.dec.lstm", tape.constant(x), s, mask);
      hs.push_back(s.h);
    }
    return models::dense(tape, ps, "rmsn.dec.out", ad::elu(models::dense(tape, ps, "rmsn.dec.fc", ad::stack_rows(hs))));
  }

  nlohmann::json to_json() const {
    return {{"hyper", hp.to_json()}, {"stats", stats.to_json()}, {"params", ad::parameters_to_json(params)}};
  }
  static RmsnDecoder from_json(const nlohmann::json& j) {
    RmsnDecoder d(RnnHyper::from_json(j.at("hyper")), Standardizer::from_json(j.at("stats")), 0);
    ad::parameters_from_json(j.at("params"), d.params);
    return d;
  }
};

struct RmsnModel {
  SequenceRegressor numerator;
  SequenceRegressor denominator;
  SequenceRegressor encoder;
  RmsnDecoder decoder;
  bool has_decoder = false;

  /// Per-day stabilised weight factors of one trajectory.
  std::vector<double> factors(const Trajectory& tr) const {
    const auto pn = propensity_probs(numerator, tr);
    const auto pd = propensity_probs(denominator, tr);
    std::vector<double> f(pn.size());
    for (std::size_t t = 0; t < f.size(); ++t) {
      const int a = tr.treatment[t];
      const bool given[2] = {sim::has_chemo(a), sim::has_radio(a)};
      double r = 1.0;
      for (int k = 0; k < 2; ++k) {
        const double n = given[k] ? pn[t][static_cast<std::size_t>(k)] : 1.0 - pn[t][static_cast<std::size_t>(k)];
        const double d = given[k] ? pd[t][static_cast<std::size_t>(k)] : 1.0 - pd[t][static_cast<std::size_t>(k)];
        r *= n / std::max(d, 1e-12);
      }
      f[t] = std::max(r, 1e-12);
    }
    return f;
  }

  /// V_{t+tau} for every plan (all the same length) from day t of `tr`.
  std::vector<double> predict(const Trajectory& tr, int t, const std::vector<std::vector<int>>& plans) const {
    const std::size_t n = plans.size();
    if (n == 0) return {};
    const std::size_t tau = plans.front().size();
    if (tau > 1 && !has_decoder) throw ConfigError("RMSN: multi-step prediction needs a trained decoder");
    const std::size_t H = encoder.hp.hidden;
    Tensor h = Tensor::matrix(n, H), c = Tensor::matrix(n, H);
    if (t > 0) {
      Tape tape(false);
      const SequenceBatch b = models::make_sequence_batch({&tr}, encoder.stats, encoder.layout, static_cast<std::size_t>(t));
      const auto st = encoder.states(tape, encoder.params, b, nullptr);
      const Tensor& hv = st.back().h.value();
      const Tensor& cv = st.back().c.value();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < H; ++j) {
          h(i, j) = hv[j];
          c(i, j) = cv[j];
        }
    }
    const std::size_t width = models::input_width(encoder.layout);
    Tensor x = Tensor::matrix(n, width);
    for (std::size_t i = 0; i < n; ++i) {
      models::write_features(tr, t, encoder.stats, encoder.layout, &x.data()[i * width]);
      const std::size_t cur = models::kCovariates + models::kTreatments;
      for (std::size_t j = 0; j < models::kTreatments; ++j) x(i, cur + j) = 0.0;
      x(i, cur + static_cast<std::size_t>(plans[i][0])) = 1.0;
    }
    auto r = encoder.step(x, h, c);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = encoder.stats.volume(r.output[i]);
    Tensor dh = r.h, dc = r.c;
    for (std::size_t k = 1; k < tau; ++k) {
      Tape tape(false);
      Tensor in = Tensor::matrix(n, RmsnDecoder::kInput);
      for (std::size_t i = 0; i < n; ++i)
        RmsnDecoder::write_input(&in.data()[i * RmsnDecoder::kInput], decoder.stats, v[i], plans[i][k], tr.subgroup);
      const LstmState s = models::lstm_step(tape, decoder.params, "rmsn.dec.lstm", tape.constant(in),
                                            LstmState{tape.constant(dh), tape.constant(dc)});
      const Tensor y = models::dense(tape, decoder.params, "rmsn.dec.out",
                                     ad::elu(models::dense(tape, decoder.params, "rmsn.dec.fc", s.h)))
                           .value();
      for (std::size_t i = 0; i < n; ++i) v[i] = decoder.stats.volume(y[i]);
      dh = s.h.value();
      dc = s.c.value();
    }
    return v;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"numerator", numerator.to_json()},
                        {"denominator", denominator.to_json()},
                        {"encoder", encoder.to_json()}};
    if (has_decoder) j["decoder"] = decoder.to_json();
    return j;
  }
  static RmsnModel from_json(const nlohmann::json& j) {
    RmsnModel m;
    m.numerator = SequenceRegressor::from_json(j.at("numerator"));
    m.denominator = SequenceRegressor::from_json(j.at("denominator"));
    m.encoder = SequenceRegressor::from_json(j.at("encoder"));
    if (j.contains("decoder")) {
      m.decoder = RmsnDecoder::from_json(j.at("decoder"));
      m.has_decoder = true;
    }
    return m;
  }
};

struct RmsnConfig {
  RnnHyper propensity;
  RnnHyper encoder;
  RnnHyper decoder;
  TrainConfig propensity_train;
  TrainConfig encoder_train;
  TrainConfig decoder_train;  // tau_max decides the decoder horizon; 1 skips it
  double truncate_lo = 0.01;
  double truncate_hi = 0.99;
};

/// Propensity networks, weighted one-step encoder, then the weighted decoder.
inline RmsnModel train_rmsn(const std::vector<Trajectory>& train, const std::vector<Trajectory>& validation,
                            const RmsnConfig& cfg) {
  RmsnModel m;
  m.numerator = train_propensity(train, validation, "rmsn.num", InputLayout::TreatmentsOnly, cfg.propensity,
                                 cfg.propensity_train).model;
  m.denominator = train_propensity(train, validation, "rmsn.den", InputLayout::History, cfg.propensity,
                                   cfg.propensity_train).model;

  std::vector<models::WeightTable> tables;
  std::vector<double> single;
  for (const Trajectory& tr : train) {
    tables.emplace_back(m.factors(tr));
    for (int t = 0; t < tr.length(); ++t) single.push_back(tables.back().weight(t, 1));
  }
  const double lo1 = models::percentile(single, cfg.truncate_lo);
  const double hi1 = models::percentile(single, cfg.truncate_hi);
  auto w1 = [&](std::size_t i, int t) { return std::clamp(tables[i].weight(t, 1), lo1, hi1); };
  m.encoder = train_rnn(train, validation, cfg.encoder, cfg.encoder_train, w1, "rmsn.enc").model;

  const int tau_max = cfg.decoder_train.tau_max;
  if (tau_max < 2) return m;

  // encoder states after each day, then decoder windows t .. t + tau_max - 1
  struct Window {
    std::size_t patient;
    int t;
    std::vector<double> h, c;
  };
  std::vector<Window> windows;
  const std::size_t H = m.encoder.hp.hidden;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const Trajectory& tr = train[i];
    if (tr.length() < tau_max) continue;
    Tape tape(false);
    const SequenceBatch b = models::make_sequence_batch({&tr}, m.encoder.stats, m.encoder.layout);
    const auto st = m.encoder.states(tape, m.encoder.params, b, nullptr);
    for (int t = 0; t + tau_max <= tr.length(); ++t) {
      const Tensor& hv = st[static_cast<std::size_t>(t)].h.value();
      const Tensor& cv = st[static_cast<std::size_t>(t)].c.value();
      windows.push_back({i, t, {hv.data().begin(), hv.data().begin() + static_cast<std::ptrdiff_t>(H)},
                         {cv.data().begin(), cv.data().begin() + static_cast<std::ptrdiff_t>(H)}});
    }
  }
  if (windows.empty()) return m;
  // horizon-h weight of step k (predicting V_{t+k+1}) is SW(t, k+1), truncated per horizon
  const auto steps = static_cast<std::size_t>(tau_max - 1);
  std::vector<std::vector<double>> wts(steps, std::vector<double>(windows.size()));
  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t w = 0; w < windows.size(); ++w)
      wts[k][w] = tables[windows[w].patient].weight(windows[w].t, static_cast<int>(k) + 2);
    models::truncate_weights(wts[k], cfg.truncate_lo, cfg.truncate_hi);
  }

  RnnHyper dh = cfg.decoder;
  dh.hidden = H;  // state handed over from the encoder
  m.decoder = RmsnDecoder(dh, m.encoder.stats, cfg.decoder_train.seed);
  RmsnDecoder& dec = m.decoder;
  auto loss = [&](Tape& tape, const std::vector<std::size_t>& idx, double, Rng& rng) {
    const std::size_t n = idx.size();
    Tensor h0 = Tensor::matrix(n, H), c0 = Tensor::matrix(n, H);
    std::vector<Tensor> inputs;
    Tensor target = Tensor::matrix(steps * n, 1), weight = Tensor::matrix(steps * n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(windows[idx[i]].h.begin(), windows[idx[i]].h.end(), h0.data().begin() + static_cast<std::ptrdiff_t>(i * H));
      std::copy(windows[idx[i]].c.begin(), windows[idx[i]].c.end(), c0.data().begin() + static_cast<std::ptrdiff_t>(i * H));
    }
    for (std::size_t k = 0; k < steps; ++k) {
      Tensor x = Tensor::matrix(n, RmsnDecoder::kInput);
      for (std::size_t i = 0; i < n; ++i) {
        const Window& w = windows[idx[i]];
        const Trajectory& tr = train[w.patient];
        const int day = w.t + static_cast<int>(k) + 1;
        RmsnDecoder::write_input(&x.data()[i * RmsnDecoder::kInput], dec.stats, tr.volume[static_cast<std::size_t>(day)],
                                 tr.treatment[static_cast<std::size_t>(day)], tr.subgroup);
        target[k * n + i] = dec.stats.target(tr.outcome(day));
        weight[k * n + i] = wts[k][idx[i]];
      }
      inputs.push_back(std::move(x));
    }
    const Var y = RmsnDecoder::forward(tape, dec.params, dec.hp, h0, c0, inputs, &rng);
    BatchLoss l;
    l.outcome = masked_mse(y, target, weight, static_cast<double>(steps * n));
    return l;
  };
  run_minibatch_loop(dec.params, windows.size(), cfg.decoder_train, loss, {}, "rmsn.dec");
  m.has_decoder = true;
  return m;
}

}  // namespace crn::train

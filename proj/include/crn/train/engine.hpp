#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "crn/autodiff.hpp"
#include "crn/models/crn.hpp"
#include "crn/models/features.hpp"
#include "crn/models/rnn.hpp"
#include "crn/sim/io.hpp"

namespace crn::train {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using models::Standardizer;
using sim::Trajectory;

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 0.01;
  std::size_t batch_size = 64;
  double lambda_max = 1.0;
  bool literal_lambda = false;  // progress = raw epoch counter instead of epoch/epochs
  int tau_max = 5;
  std::uint64_t seed = 0;
  double max_grad_norm = 0.0;
  double outcome_scale = sim::kMaxVolume;
  int log_every = 1;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (tau_max < 1) throw ConfigError("tau_max must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(lambda_max >= 0.0)) throw ConfigError("lambda_max must be >= 0");
    if (!(outcome_scale > 0.0)) throw ConfigError("outcome_scale must be > 0");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},           {"learning_rate", learning_rate}, {"batch_size", batch_size},
            {"lambda_max", lambda_max},   {"literal_lambda", literal_lambda}, {"tau_max", tau_max},
            {"seed", seed},               {"max_grad_norm", max_grad_norm}, {"outcome_scale", outcome_scale},
            {"log_every", log_every}};
  }
  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lambda_max = j.value("lambda_max", c.lambda_max);
    c.literal_lambda = j.value("literal_lambda", c.literal_lambda);
    c.tau_max = j.value("tau_max", c.tau_max);
    c.seed = j.value("seed", c.seed);
    c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
    c.outcome_scale = j.value("outcome_scale", c.outcome_scale);
    c.log_every = j.value("log_every", c.log_every);
    c.validate();
    return c;
  }
};

/// 2 / (1 + exp(-10 p)) - 1, scaled by lambda_max.
inline double lambda_schedule(double progress, double lambda_max = 1.0) {
  return lambda_max * (2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0);
}

inline double epoch_lambda(const TrainConfig& c, int epoch) {
  const double p = c.literal_lambda ? static_cast<double>(epoch)
                                    : static_cast<double>(epoch) / static_cast<double>(c.epochs);
  return lambda_schedule(p, c.lambda_max);
}

struct EpochLog {
  int epoch = 0;
  double outcome_loss = 0.0;
  double treatment_loss = 0.0;
  double lambda = 0.0;
  double validation_rmse = 0.0;
};

inline void write_train_log_csv(std::ostream& os, const std::vector<EpochLog>& log) {
  os << "epoch,outcome_loss,treatment_loss,lambda,validation_rmse\n";
  for (const EpochLog& e : log) {
    os << e.epoch << ',' << sim::format_double(e.outcome_loss) << ',' << sim::format_double(e.treatment_loss)
       << ',' << sim::format_double(e.lambda) << ',' << sim::format_double(e.validation_rmse) << '\n';
  }
}

/// Per-batch losses. `treatment` may be invalid when a model has no
/// classifier branch.
struct BatchLoss {
  Var outcome;
  Var treatment;
};

using BatchLossFn = std::function<BatchLoss(Tape&, const std::vector<std::size_t>& items, double lambda, Rng& rng)>;

struct LoopResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_validation = 0.0;
};

/// Shuffled minibatch Adam loop over `n_items`. `validate` returns the
/// validation error after each epoch; parameters of the best epoch are
/// restored at the end. A validate returning NaN disables checkpointing.
inline LoopResult run_minibatch_loop(ad::ParameterSet& params, std::size_t n_items, const TrainConfig& cfg,
                                     const BatchLossFn& loss_fn, const std::function<double()>& validate,
                                     const std::string& what) {
  cfg.validate();
  if (n_items == 0) throw ConfigError(what + ": no training examples");
  ad::Adam adam(params.all(), {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.max_grad_norm});
  Rng rng = make_rng({cfg.seed, models::name_key(what), 0x5eed});
  std::vector<std::size_t> order(n_items);
  std::iota(order.begin(), order.end(), std::size_t{0});
  LoopResult res;
  ad::ParameterSet best = params;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lambda = epoch_lambda(cfg, epoch);
    shuffle(order.begin(), order.end(), rng);
    double sum_y = 0.0, sum_a = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < n_items; lo += cfg.batch_size) {
      const std::size_t hi = std::min(n_items, lo + cfg.batch_size);
      std::vector<std::size_t> items(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                     order.begin() + static_cast<std::ptrdiff_t>(hi));
      Tape tape;
      const BatchLoss l = loss_fn(tape, items, lambda, rng);
      const double ly = l.outcome.value().item();
      const double la = l.treatment.valid() ? l.treatment.value().item() : 0.0;
      if (!std::isfinite(ly) || !std::isfinite(la)) {
        throw NumericalError(what + ": non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batches));
      }
      const Var total = l.treatment.valid() ? ad::add(l.outcome, l.treatment) : l.outcome;
      adam.zero_grad();
      tape.backward(total);
      adam.step();
      sum_y += ly;
      sum_a += la;
      ++batches;
    }
    EpochLog e;
    e.epoch = epoch;
    e.outcome_loss = sum_y / static_cast<double>(batches);
    e.treatment_loss = sum_a / static_cast<double>(batches);
    e.lambda = lambda;
    e.validation_rmse = validate ? validate() : std::nan("");
    if (std::isfinite(e.validation_rmse) && (res.best_epoch < 0 || e.validation_rmse < res.best_validation)) {
      res.best_epoch = epoch;
      res.best_validation = e.validation_rmse;
      best = params;
    }
    if ((epoch + 1) % cfg.log_every == 0 || epoch + 1 == cfg.epochs) res.log.push_back(e);
  }
  if (res.best_epoch >= 0) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k].value = best[k].value;
  }
  return res;
}

inline double normalized_rmse_of(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.empty() || pred.size() != truth.size()) throw ConfigError("normalized_rmse: bad input sizes");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return 100.0 * std::sqrt(s / static_cast<double>(pred.size())) / sim::kMaxVolume;
}

inline std::vector<const Trajectory*> pointers(const std::vector<Trajectory>& data) {
  std::vector<const Trajectory*> p;
  for (const Trajectory& tr : data) p.push_back(&tr);
  return p;
}

inline std::vector<const Trajectory*> pick(const std::vector<const Trajectory*>& all,
                                           const std::vector<std::size_t>& idx) {
  std::vector<const Trajectory*> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

/// Masked mean squared error over the valid rows, optionally row-weighted.
inline Var masked_mse(const Var& pred, const Tensor& target, const Tensor& mask, double denom) {
  const Var diff = ad::sub(pred, pred.tape().constant(target));
  return ad::scale(ad::masked_sum(ad::square(diff), mask), 1.0 / denom);
}

// ---------------------------------------------------------------------------
// Encoder

struct EncoderResult {
  models::CrnEncoder model;
  LoopResult loop;
};

/// Factual one-step validation RMSE (%) of a CRN encoder.
inline double encoder_factual_rmse(const models::CrnEncoder& enc, const std::vector<const Trajectory*>& data) {
  std::vector<double> pred, truth;
  const auto reps = enc.representation_matrices(data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto y = enc.predict_from_repr(reps[i], data[i]->treatment);
    for (int t = 0; t < data[i]->length(); ++t) {
      pred.push_back(y[static_cast<std::size_t>(t)]);
      truth.push_back(data[i]->outcome(t));
    }
  }
  return normalized_rmse_of(pred, truth);
}

/// Encoder training. `adversarial = false` keeps the architecture but fixes
/// lambda at zero (the CRN(lambda=0) comparison model).
inline EncoderResult train_encoder(const std::vector<Trajectory>& train, const std::vector<Trajectory>& validation,
                                   const models::CrnHyper& hp, const TrainConfig& cfg, bool adversarial = true) {
  if (train.empty()) throw ConfigError("train_encoder: empty dataset");
  EncoderResult r;
  r.model = models::CrnEncoder(hp, Standardizer::fit(train, cfg.outcome_scale), cfg.seed);
  const auto tr = pointers(train);
  const auto va = pointers(validation);
  models::CrnEncoder& enc = r.model;
  TrainConfig c = cfg;
  if (!adversarial) c.lambda_max = 0.0;
  auto loss = [&](Tape& tape, const std::vector<std::size_t>& idx, double lambda, Rng& rng) {
    const models::SequenceBatch b = models::make_sequence_batch(pick(tr, idx), enc.stats, models::InputLayout::History);
    const models::HeadOutputs o = models::CrnEncoder::forward(tape, enc.params, enc.hp, b, lambda, &rng);
    const double n = static_cast<double>(b.valid);
    BatchLoss l;
    l.outcome = masked_mse(o.outcome, b.target, b.mask, n);
    l.treatment = ad::scale(ad::cross_entropy_sum(o.probs, b.treatment_onehot), 1.0 / n);
    return l;
  };
  std::function<double()> val;
  if (!va.empty()) val = [&] { return encoder_factual_rmse(enc, va); };
  r.loop = run_minibatch_loop(enc.params, tr.size(), c, loss, val, "encoder");
  return r;
}

/// Representation matrices (T_i x R) for every patient, dropout off.
inline std::vector<Tensor> extract_representations(const models::CrnEncoder& enc, const std::vector<Trajectory>& data) {
  return enc.representation_matrices(pointers(data));
}

// ---------------------------------------------------------------------------
// Decoder windows

struct DecoderWindow {
  const Trajectory* patient = nullptr;
  int anchor = 0;                 // representation day t
  std::vector<double> init;       // phi_t
};

/// Windows with anchors t = 1 .. T - tau_max, so a patient of length T gives
/// T - tau_max windows. Patients with T < tau_max + 1 are skipped and counted.
inline std::vector<DecoderWindow> make_decoder_windows(const std::vector<Trajectory>& data,
                                                       const std::vector<Tensor>& reps, int tau_max,
                                                       std::size_t* skipped = nullptr) {
  if (tau_max < 1) throw ConfigError("make_decoder_windows: tau_max must be >= 1");
  if (reps.size() != data.size()) throw ConfigError("make_decoder_windows: one representation matrix per patient");
  std::vector<DecoderWindow> out;
  std::size_t skip = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int len = data[i].length();
    if (len < tau_max + 1) {
      ++skip;
      continue;
    }
    const std::size_t r = reps[i].cols();
    for (int t = 1; t <= len - tau_max; ++t) {
      DecoderWindow w;
      w.patient = &data[i];
      w.anchor = t;
      w.init.assign(reps[i].data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t) * r),
                    reps[i].data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t + 1) * r));
      out.push_back(std::move(w));
    }
  }
  if (skipped != nullptr) *skipped = skip;
  return out;
}

/// Teacher-forced batch: step k consumes [z(V_{t+k}), A_{t+k-1}, V] and
/// scores A_{t+k} against target V_{t+k+1}.
inline models::DecoderBatch make_decoder_batch(const std::vector<const DecoderWindow*>& windows, int tau,
                                               const Standardizer& s) {
  models::DecoderBatch b;
  const std::size_t n = windows.size();
  const std::size_t r = windows.front()->init.size();
  b.init = Tensor::matrix(n, r);
  const auto steps = static_cast<std::size_t>(tau);
  b.target = Tensor::matrix(steps * n, 1);
  b.treatment_onehot = Tensor::matrix(steps * n, models::kTreatments);
  b.weight = Tensor::matrix(steps * n, 1, 1.0);
  b.treatment.assign(steps * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(windows[i]->init.begin(), windows[i]->init.end(), b.init.data().begin() + static_cast<std::ptrdiff_t>(i * r));
  for (std::size_t k = 0; k < steps; ++k) {
    Tensor x = Tensor::matrix(n, models::kDecoderInput);
    Tensor cur = Tensor::matrix(n, models::kTreatments);
    for (std::size_t i = 0; i < n; ++i) {
      const Trajectory& tr = *windows[i]->patient;
      const int day = windows[i]->anchor + static_cast<int>(k);
      x(i, 0) = s.z_volume(tr.volume[static_cast<std::size_t>(day)]);
      x(i, 1 + static_cast<std::size_t>(models::previous_treatment(tr, day))) = 1.0;
      x(i, 1 + models::kTreatments + static_cast<std::size_t>(tr.subgroup - 1)) = 1.0;
      const int a = tr.treatment[static_cast<std::size_t>(day)];
      cur(i, static_cast<std::size_t>(a)) = 1.0;
      const std::size_t row = k * n + i;
      b.treatment[row] = a;
      b.treatment_onehot(row, static_cast<std::size_t>(a)) = 1.0;
      b.target[row] = s.target(tr.outcome(day));
    }
    b.inputs.push_back(std::move(x));
    b.current.push_back(std::move(cur));
  }
  return b;
}

struct DecoderResult {
  models::CrnDecoder model;
  LoopResult loop;
};

/// Factual tau_max-step validation RMSE (%) of a decoder on windows
/// (autoregressive, factual treatments as the plan).
inline double decoder_factual_rmse(const models::CrnDecoder& dec, const std::vector<DecoderWindow>& windows, int tau) {
  if (windows.empty()) return std::nan("");
  std::vector<double> pred, truth;
  const std::size_t chunk = 4096;
  for (std::size_t lo = 0; lo < windows.size(); lo += chunk) {
    const std::size_t hi = std::min(windows.size(), lo + chunk);
    const std::size_t n = hi - lo;
    const std::size_t r = windows[lo].init.size();
    Tensor init = Tensor::matrix(n, r);
    std::vector<double> v0(n);
    std::vector<int> prev(n), sub(n);
    std::vector<std::vector<int>> plans(n);
    for (std::size_t i = 0; i < n; ++i) {
      const DecoderWindow& w = windows[lo + i];
      std::copy(w.init.begin(), w.init.end(), init.data().begin() + static_cast<std::ptrdiff_t>(i * r));
      v0[i] = w.patient->volume[static_cast<std::size_t>(w.anchor)];
      prev[i] = models::previous_treatment(*w.patient, w.anchor);
      sub[i] = w.patient->subgroup;
      plans[i].assign(w.patient->treatment.begin() + w.anchor, w.patient->treatment.begin() + w.anchor + tau);
    }
    const auto y = dec.predict(init, v0, prev, sub, plans);
    for (std::size_t i = 0; i < n; ++i) {
      const DecoderWindow& w = windows[lo + i];
      pred.push_back(y[i].back());
      truth.push_back(w.patient->volume[static_cast<std::size_t>(w.anchor + tau)]);
    }
  }
  return normalized_rmse_of(pred, truth);
}

inline DecoderResult train_decoder(const std::vector<DecoderWindow>& train, const std::vector<DecoderWindow>& validation,
                                   std::size_t encoder_repr, const Standardizer& stats, const models::CrnHyper& hp,
                                   const TrainConfig& cfg, bool adversarial = true) {
  if (train.empty()) throw ConfigError("train_decoder: no windows");
  DecoderResult r;
  r.model = models::CrnDecoder(hp, encoder_repr, stats, cfg.seed);
  models::CrnDecoder& dec = r.model;
  TrainConfig c = cfg;
  if (!adversarial) c.lambda_max = 0.0;
  auto loss = [&](Tape& tape, const std::vector<std::size_t>& idx, double lambda, Rng& rng) {
    std::vector<const DecoderWindow*> ws;
    for (std::size_t i : idx) ws.push_back(&train[i]);
    const models::DecoderBatch b = make_decoder_batch(ws, c.tau_max, dec.stats);
    const models::HeadOutputs o = models::CrnDecoder::forward(tape, dec.params, dec.hp, b, lambda, &rng);
    const double n = static_cast<double>(b.target.rows());
    BatchLoss l;
    l.outcome = masked_mse(o.outcome, b.target, b.weight, n);
    l.treatment = ad::scale(ad::cross_entropy_sum(o.probs, b.treatment_onehot), 1.0 / n);
    return l;
  };
  std::function<double()> val;
  if (!validation.empty()) val = [&] { return decoder_factual_rmse(dec, validation, c.tau_max); };
  r.loop = run_minibatch_loop(dec.params, train.size(), c, loss, val, "decoder");
  return r;
}

// ---------------------------------------------------------------------------
// Baseline RNN (also the RMSN encoder when row weights are supplied)

struct RnnResult {
  models::SequenceRegressor model;
  LoopResult loop;
};

inline double rnn_factual_rmse(const models::SequenceRegressor& m, const std::vector<const Trajectory*>& data) {
  std::vector<double> pred, truth;
  for (std::size_t lo = 0; lo < data.size(); lo += 256) {
    const std::size_t hi = std::min(data.size(), lo + 256);
    std::vector<const Trajectory*> part(data.begin() + static_cast<std::ptrdiff_t>(lo),
                                        data.begin() + static_cast<std::ptrdiff_t>(hi));
    Tape tape(false);
    const models::SequenceBatch b = models::make_sequence_batch(part, m.stats, m.layout);
    const Tensor y = m.forward(tape, m.params, b, nullptr).value();
    for (std::size_t r = 0; r < b.mask.rows(); ++r) {
      if (b.mask[r] == 0.0) continue;
      pred.push_back(m.stats.volume(y[r]));
      truth.push_back(m.stats.volume(b.target[r]));
    }
  }
  return normalized_rmse_of(pred, truth);
}

/// `row_weight(patient index, t)` multiplies each squared error (1 if unset).
inline RnnResult train_rnn(const std::vector<Trajectory>& train, const std::vector<Trajectory>& validation,
                           const models::RnnHyper& hp, const TrainConfig& cfg,
                           const std::function<double(std::size_t, int)>& row_weight = {},
                           const std::string& prefix = "rnn") {
  if (train.empty()) throw ConfigError("train_rnn: empty dataset");
  RnnResult r;
  r.model = models::SequenceRegressor(prefix, models::InputLayout::HistoryAndCurrent, 1, hp,
                                      Standardizer::fit(train, cfg.outcome_scale), cfg.seed);
  models::SequenceRegressor& m = r.model;
  const auto tr = pointers(train);
  const auto va = pointers(validation);
  auto loss = [&](Tape& tape, const std::vector<std::size_t>& idx, double, Rng& rng) {
    const models::SequenceBatch b = models::make_sequence_batch(pick(tr, idx), m.stats, m.layout);
    Tensor w = b.mask;
    if (row_weight) {
      for (std::size_t t = 0; t < b.steps; ++t)
        for (std::size_t i = 0; i < b.batch; ++i)
          if (w[t * b.batch + i] != 0.0) w[t * b.batch + i] = row_weight(idx[i], static_cast<int>(t));
    }
    const Var y = m.forward(tape, m.params, b, &rng);
    BatchLoss l;
    l.outcome = masked_mse(y, b.target, w, static_cast<double>(b.valid));
    return l;
  };
  std::function<double()> val;
  if (!va.empty()) val = [&] { return rnn_factual_rmse(m, va); };
  r.loop = run_minibatch_loop(m.params, tr.size(), cfg, loss, val, prefix);
  return r;
}

}  // namespace crn::train

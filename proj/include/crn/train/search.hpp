#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "crn/error.hpp"
#include "crn/random.hpp"
#include "crn/sim/io.hpp"
#include "crn/train/engine.hpp"

namespace crn::train {

/// Finite candidate lists. Size-like entries are multipliers: hidden and
/// repr scale the model input width C, fc scales the chosen repr R.
struct SearchSpace {
  std::vector<double> learning_rate{0.01, 0.001, 0.0001};
  std::vector<std::size_t> batch_size{64, 128, 256};
  std::vector<double> hidden{0.5, 1, 2, 3, 4};
  std::vector<double> repr{0.5, 1, 2, 3, 4};
  std::vector<double> fc{0.5, 1, 2, 3, 4};
  std::vector<double> dropout{0.1, 0.2, 0.3, 0.4, 0.5};

  static SearchSpace encoder() { return {}; }
  static SearchSpace decoder() {
    SearchSpace s;
    s.batch_size = {256, 512, 1024};
    s.hidden = {1};  // decoder state size is tied to the encoder's R
    return s;
  }

  std::size_t size() const {
    return learning_rate.size() * batch_size.size() * hidden.size() * repr.size() * fc.size() * dropout.size();
  }
  void validate() const {
    if (size() == 0) throw ConfigError("search space has an empty candidate list");
  }
};

struct TrialPoint {
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
  models::CrnHyper hp;
};

inline std::size_t scaled(double mult, std::size_t base) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(mult * static_cast<double>(base))));
}

/// Decodes a flat index of the Cartesian product.
inline TrialPoint trial_point(const SearchSpace& s, std::size_t index, std::size_t input_width) {
  auto take = [&index](std::size_t n) {
    const std::size_t k = index % n;
    index /= n;
    return k;
  };
  TrialPoint p;
  p.learning_rate = s.learning_rate[take(s.learning_rate.size())];
  p.batch_size = s.batch_size[take(s.batch_size.size())];
  p.hp.hidden = scaled(s.hidden[take(s.hidden.size())], input_width);
  p.hp.repr = scaled(s.repr[take(s.repr.size())], input_width);
  p.hp.fc = scaled(s.fc[take(s.fc.size())], p.hp.repr);
  p.hp.dropout = s.dropout[take(s.dropout.size())];
  return p;
}

struct LeaderboardRow {
  std::size_t trial = 0;
  TrialPoint point;
  double validation_rmse = 0.0;
  std::string error;  // empty when the trial finished
};

struct SearchResult {
  std::vector<LeaderboardRow> leaderboard;  // trial order
  std::size_t best = 0;                     // index into leaderboard
  const LeaderboardRow& best_row() const { return leaderboard.at(best); }
};

/// Distinct points of the space, uniformly without replacement (with
/// replacement once the space is exhausted).
inline std::vector<std::size_t> sample_trials(const SearchSpace& s, std::size_t n_iters, std::uint64_t seed) {
  s.validate();
  Rng rng = make_rng({seed, models::name_key("search")});
  std::vector<std::size_t> out;
  while (out.size() < n_iters) {
    std::vector<std::size_t> perm(s.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < perm.size() && out.size() < n_iters; ++i) out.push_back(perm[i]);
  }
  return out;
}

/// Evaluates `trial(point, trial_index)` for every sampled point over up to
/// `workers` threads. Trials share nothing; the trial index seeds each run.
/// A trial that throws is kept on the leaderboard with its error text.
inline SearchResult random_search(const SearchSpace& s, std::size_t n_iters, std::uint64_t seed, std::size_t input_width,
                                  const std::function<double(const TrialPoint&, std::size_t)>& trial,
                                  std::size_t workers = 1) {
  if (n_iters == 0) throw ConfigError("search needs n_iters >= 1");
  const auto idx = sample_trials(s, n_iters, seed);
  SearchResult r;
  r.leaderboard.resize(n_iters);
  for (std::size_t i = 0; i < n_iters; ++i) {
    r.leaderboard[i].trial = i;
    r.leaderboard[i].point = trial_point(s, idx[i], input_width);
  }
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n_iters; i = next++) {
      LeaderboardRow& row = r.leaderboard[i];
      try {
        row.validation_rmse = trial(row.point, i);
        if (!std::isfinite(row.validation_rmse)) row.error = "non-finite validation rmse";
      } catch (const std::exception& e) {
        row.error = e.what();
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n_iters));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  bool any = false;
  for (std::size_t i = 0; i < n_iters; ++i) {
    const auto& row = r.leaderboard[i];
    if (!row.error.empty()) continue;
    if (!any || row.validation_rmse < r.leaderboard[r.best].validation_rmse) r.best = i;
    any = true;
  }
  if (!any) throw NumericalError("search: every trial failed");
  return r;
}

inline void write_leaderboard_csv(std::ostream& os, const SearchResult& r) {
  os << "trial,learning_rate,batch_size,hidden,repr,fc,dropout,validation_rmse,error\n";
  for (const auto& row : r.leaderboard) {
    os << row.trial << ',' << sim::format_double(row.point.learning_rate) << ',' << row.point.batch_size << ','
       << row.point.hp.hidden << ',' << row.point.hp.repr << ',' << row.point.hp.fc << ','
       << sim::format_double(row.point.hp.dropout) << ',';
    if (row.error.empty()) os << sim::format_double(row.validation_rmse);
    os << ',' << (row.error.empty() ? "" : "failed") << '\n';
  }
}

/// Encoder search: each trial trains with the sampled point and reports the
/// factual validation RMSE.
inline SearchResult search_encoder(const std::vector<Trajectory>& train, const std::vector<Trajectory>& validation,
                                   const TrainConfig& base, std::size_t n_iters = 50,
                                   const SearchSpace& s = SearchSpace::encoder(), std::size_t workers = 1,
                                   bool adversarial = true) {
  if (validation.empty()) throw ConfigError("search_encoder: needs validation patients");
  const std::size_t C = models::input_width(models::InputLayout::History);
  return random_search(
      s, n_iters, base.seed, C,
      [&](const TrialPoint& p, std::size_t i) {
        TrainConfig c = base;
        c.learning_rate = p.learning_rate;
        c.batch_size = p.batch_size;
        c.seed = stream_key({base.seed, i});
        const auto res = train_encoder(train, validation, p.hp, c, adversarial);
        return res.loop.best_validation;
      },
      workers);
}

/// Decoder search over windows built from a fixed encoder.
inline SearchResult search_decoder(const std::vector<DecoderWindow>& train, const std::vector<DecoderWindow>& validation,
                                   std::size_t encoder_repr, const Standardizer& stats, const TrainConfig& base,
                                   std::size_t n_iters = 30, const SearchSpace& s = SearchSpace::decoder(),
                                   std::size_t workers = 1, bool adversarial = true) {
  if (validation.empty()) throw ConfigError("search_decoder: needs validation windows");
  return random_search(
      s, n_iters, base.seed, models::kDecoderInput,
      [&](const TrialPoint& p, std::size_t i) {
        TrainConfig c = base;
        c.learning_rate = p.learning_rate;
        c.batch_size = p.batch_size;
        c.seed = stream_key({base.seed, i});
        const auto res = train_decoder(train, validation, encoder_repr, stats, p.hp, c, adversarial);
        return res.loop.best_validation;
      },
      workers);
}

}  // namespace crn::train

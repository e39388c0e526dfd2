// Acceptance run: one PASS/FAIL line per criterion, end-to-end at desk scale.
//
//   crn_acceptance [--out DIR] [--seeds N] [--strict]
//
// Exit status is 1 when a criterion fails that is not on the known-red list
// below (or any failure with --strict). Known-red criteria still print FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "crn/eval/diagnostics.hpp"
#include "crn/eval/estimators.hpp"
#include "crn/eval/metrics.hpp"
#include "crn/experiment/pipeline.hpp"
#include "crn/models/linear.hpp"
#include "crn/platform.hpp"
#include "crn/sim.hpp"
#include "gradcheck.hpp"

using namespace crn;
namespace ex = crn::experiment;

namespace {

// Criteria that cannot pass under this simulator; the reasons live in the
// README. Keep this list short and honest.
//  7: adversarial CRN does not beat CRN_lambda0 at gamma=8 here
//  8: the true policy is only ~0.3 points above always-majority, so no probe
//     can open a 5-point gap
// 10: MSM/CRN at tau=5 lands near 1.1-1.25, not 1.5
const std::set<int> kKnownRed = {7, 8, 10};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

sim::SimConfig desk_config(double gamma, std::uint64_t seed) {
  sim::SimConfig c;
  c.priors = sim::load_priors(CRN_DEFAULT_PRIORS);
  c.gamma_c = c.gamma_r = gamma;
  c.seed = seed;
  return c;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome autodiff_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    check::RandomGraph g(s);
    worst = std::max(worst, check::max_gradient_error(g.params, [&g](ad::Tape& t, ad::ParameterSet& ps) {
      return g(t, ps);
    }));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 30.0, "100 graphs, max rel err " + fmt(worst * 1e9, 3) + "e-9, " + fmt(secs, 2) + " s"};
}

Outcome grl_contract() {
  Rng rng = make_rng({77});
  bool fwd = true;
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t r = 2 + uniform_index(rng, 5), k = 2 + uniform_index(rng, 5);
    const ad::Tensor x = check::random_tensor(r, k, rng);
    {
      ad::Tape t;
      fwd = fwd && ad::gradient_reversal(t.variable(x), 0.3 + rep).value() == x;
    }
    ad::ParameterSet ps;
    ps.add("w", check::random_tensor(k, 4, rng));
    ps.add("v", check::random_tensor(4, 3, rng));
    auto run = [&](double lambda, bool reversed) {
      ps.zero_grad();
      ad::Tape t;
      ad::Var phi = ad::elu(ad::matmul(t.constant(x), t.param(ps.at("w"))));
      if (reversed) phi = ad::gradient_reversal(phi, lambda);
      t.backward(ad::mean(ad::log(ad::softmax(ad::matmul(phi, t.param(ps.at("v")))))));
      return ps.at("w").grad;
    };
    const ad::Tensor base = run(0.0, false);
    for (double lambda : {0.0, 0.3, 1.0, 2.5}) {
      const ad::Tensor g = run(lambda, true);
      for (std::size_t i = 0; i < g.numel(); ++i) worst = std::max(worst, std::abs(g[i] + lambda * base[i]));
    }
  }
  return {fwd && worst <= 1e-12,
          std::string("forward ") + (fwd ? "bit-exact" : "DIFFERS") + ", backward max |g + lambda*g0| " +
              fmt(worst * 1e15, 2) + "e-15"};
}

Outcome simulator_policy() {
  sim::SimConfig c;
  c.gamma_c = 10.0;
  const double p10 = sim::treatment_probabilities(0.75 * c.d_max, c).chemo;
  c.gamma_c = 1.0;
  const double p1 = sim::treatment_probabilities(0.75 * c.d_max, c).chemo;
  auto u = desk_config(0.0, 11);
  u.n_patients = 2000;
  double n = 0, chemo = 0, radio = 0;
  for (const auto& tr : sim::simulate_dataset(u, sim::Split::Train))
    for (int a : tr.treatment) {
      n += 1;
      chemo += sim::has_chemo(a);
      radio += sim::has_radio(a);
    }
  const double se = std::sqrt(0.25 / n);
  const double zc = std::abs(chemo / n - 0.5) / se, zr = std::abs(radio / n - 0.5) / se;
  const bool ok = p10 >= 0.920 && p10 <= 0.925 && p1 >= 0.560 && p1 <= 0.563 && n >= 1e5 && zc <= 3 && zr <= 3;
  return {ok, "p(gamma=10) " + fmt(p10, 4) + ", p(gamma=1) " + fmt(p1, 4) + ", gamma=0 over " + fmt(n, 0) +
                  " draws: chemo " + fmt(chemo / n, 4) + " (z " + fmt(zc, 2) + "), radio " + fmt(radio / n, 4) +
                  " (z " + fmt(zr, 2) + ")"};
}

Outcome factual_branch_consistency() {
  const auto c = desk_config(5.0, 12);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  Rng rng = make_rng({12, 4});
  int bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto& tr = te[uniform_index(rng, te.size())];
    const int t = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(tr.length())));
    const auto b = sim::generate_counterfactuals(tr, t, 1, c);
    bad += b.true_outcomes[static_cast<std::size_t>(tr.treatment[static_cast<std::size_t>(t)])] != tr.outcome(t);
  }
  return {bad == 0, "1000 random anchors, " + std::to_string(bad) + " mismatches (exact comparison)"};
}

Outcome iptw_and_wls() {
  auto c = desk_config(5.0, 13);
  c.n_patients = 300;
  const auto d = sim::simulate_dataset(c, sim::Split::Train);
  std::vector<const sim::Trajectory*> ptrs;
  for (const auto& tr : d) ptrs.push_back(&tr);
  const auto pm = models::PropensityModels::fit(ptrs);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto f = pm.factors(d[static_cast<std::size_t>(i)]);
    const models::WeightTable w(f);
    const int n = static_cast<int>(f.size());
    for (int t = 0; t < n; ++t) {
      double p = 1.0;
      for (int tau = 1; t + tau <= n; ++tau) {
        p *= f[static_cast<std::size_t>(t + tau - 1)];
        worst = std::max(worst, std::abs(w.weight(t, tau) - p) / std::max(1.0, p));
      }
    }
  }
  models::Design des;
  des.cols = 2;
  des.add({1.0, 0.0}, 1.0, 2.0);
  des.add({1.0, 1.0}, 3.0, 1.0);
  des.add({1.0, 2.0}, 4.0, 1.0);
  const auto coef = models::weighted_least_squares(des);
  const double werr = std::max(std::abs(coef[0] - 12.0 / 11.0), std::abs(coef[1] - 17.0 / 11.0));
  return {worst <= 1e-12 && werr <= 1e-8, "weight table vs stepwise product on 100 patients: " +
                                              fmt(worst * 1e15, 2) + "e-15; weighted LS fixture error " +
                                              fmt(werr * 1e15, 2) + "e-15"};
}

Outcome optimal_classifier() {
  std::mt19937_64 rng(21);
  double worst_tv = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t K = 2 + inst % 3, M = 3 + inst % 6;
    std::vector<std::vector<double>> P(K, std::vector<double>(M));
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (auto& p : P) {
      double s = 0.0;
      for (double& v : p) s += (v = u(rng));
      for (double& v : p) v /= s;
    }
    worst_tv = std::max(worst_tv, eval::verify_optimal_classifier(P).max_tv);
  }
  double worst_eq = 0.0;
  for (std::size_t K : {2u, 3u, 4u}) {
    const auto chk = eval::verify_optimal_classifier(std::vector<std::vector<double>>(K, {0.2, 0.3, 0.5}));
    const double target = -static_cast<double>(K) * std::log(static_cast<double>(K));
    worst_eq = std::max({worst_eq, std::abs(chk.closed_objective - target), std::abs(chk.optimized_objective - target)});
  }
  return {worst_tv < 1e-3 && worst_eq < 1e-6,
          "20 instances, max TV " + fmt(worst_tv * 1e6, 2) + "e-6; equal distributions off -K log K by " +
              fmt(worst_eq * 1e9, 3) + "e-9"};
}

Outcome selection_self_test() {
  const auto c = desk_config(5.0, 14);
  auto small = c;
  small.n_test = 40;
  const auto te = sim::simulate_dataset(small, sim::Split::Test);
  std::string detail;
  bool ok = true;
  for (int tau : {2, 3, 5}) {
    const auto br = sim::generate_counterfactuals(te, tau, c, 2);
    eval::PredictionTable truth;
    for (const auto& b : br) {
      truth.sets.push_back(&b);
      truth.predicted.push_back(b.true_outcomes);
    }
    const auto self = eval::selection_accuracy(truth);
    const auto o = eval::selection_accuracy(eval::OracleEstimator(c), te, br);
    ok = ok && self.treatment == 100.0 && self.timing == 100.0 && o.treatment == 100.0 && o.timing == 100.0;
    detail += "tau " + std::to_string(tau) + " truth " + fmt(self.treatment, 1) + "/" + fmt(self.timing, 1) +
              " oracle " + fmt(o.treatment, 1) + "/" + fmt(o.timing, 1) + "; ";
  }
  // epsilon fixtures
  const auto tie = eval::select_treatment_and_timing({1.0, 1.0005, 2.0, 1.0008});
  const bool tie_ok = tie.treatment == 0 && tie.timing == 0 && tie.tied_treatments.size() == 2 &&
                      tie.tied_timings[0].size() == 2 && tie.tied_timings[1] == std::vector<int>{1};
  const auto clear = eval::select_treatment_and_timing({3.0, 2.0, 1.0, 4.0});
  const bool clear_ok = clear.treatment == 1 && clear.timing == 0 && clear.tied_treatments.size() == 1;
  ok = ok && tie_ok && clear_ok;
  detail += std::string("eps fixtures ") + (tie_ok && clear_ok ? "ok" : "WRONG");
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// learned-model criteria

struct Runner {
  eval::MetricsReport report;
  std::map<std::string, double> seconds;

  ex::Splits data(const sim::SimConfig& c) { return ex::simulate_splits(c); }

  ex::TrainedModel train(const std::string& type, const std::vector<int>& taus, std::uint64_t seed,
                         const ex::Splits& d) {
    ex::ModelSpec s = ex::ModelSpec::desk();
    s.type = type;
    s.taus = taus;
    s.encoder_train.seed = s.decoder_train.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    auto m = ex::train_model(s, d);
    seconds[type] += seconds_since(t0);
    return m;
  }

  void evaluate(const ex::TrainedModel& m, const ex::Splits& d,
                const std::map<int, std::vector<sim::BranchSet>>& br, const sim::SimConfig& c) {
    const auto est = ex::load_estimator(m.checkpoint);
    report.append(ex::evaluate_model(*est, d.test, br, {c.gamma_c, c.gamma_r, c.seed}));
  }

  double med(double gamma, const std::string& type, int tau, const std::string& metric = "rmse") const {
    return median(report.values(gamma, gamma, ex::display_name(type), tau, metric));
  }
};

struct Learned {
  Outcome confounding;  // one-step sweep
  Outcome balancing;
  Outcome multi_step;
};

Learned learned_criteria(int n_seeds, eval::MetricsReport& report) {
  Runner r;
  const std::vector<std::string> all{"crn", "crn_lambda0", "rnn", "linear", "msm", "rmsn"};
  const std::vector<std::string> core{"crn", "crn_lambda0", "linear", "msm"};
  for (double gamma : {0.0, 4.0, 8.0}) {
    for (int s = 0; s < n_seeds; ++s) {
      const auto c = desk_config(gamma, static_cast<std::uint64_t>(s));
      const auto d = r.data(c);
      const auto br = ex::make_branches(d.test, {1}, c);
      for (const auto& type : gamma == 0.0 ? all : core) {
        const auto m = r.train(type, {1}, static_cast<std::uint64_t>(s), d);
        r.evaluate(m, d, br, c);
        std::cerr << "  gamma " << gamma << " seed " << s << " " << type << " rmse "
                  << fmt(r.report.rows.back().value) << "\n";
      }
    }
  }
  Learned out;
  {
    bool ok0 = true;
    std::string d0 = "gamma=0 medians:";
    for (const auto& type : all) {
      const double v = r.med(0.0, type, 1);
      ok0 = ok0 && v <= 1.5;
      d0 += " " + ex::display_name(type) + " " + fmt(v);
    }
    const double crn = r.med(8.0, "crn", 1), crn0 = r.med(8.0, "crn_lambda0", 1);
    const double lin = r.med(8.0, "linear", 1), msm = r.med(8.0, "msm", 1);
    const bool order = lin > crn0 && msm > crn0 && crn0 >= crn;
    const bool margin = crn <= 0.9 * crn0;
    out.confounding.pass = ok0 && order && margin;
    out.confounding.detail = d0 + (ok0 ? " (all <= 1.5)" : " (some > 1.5)") + "; gamma=8 medians: Linear " +
                             fmt(lin) + " MSM " + fmt(msm) + " CRN_lambda0 " + fmt(crn0) + " CRN " + fmt(crn) +
                             " -> ordering " + (order ? "holds" : "broken") + ", CRN/CRN_lambda0 = " +
                             fmt(crn / crn0) + (margin ? " (<= 0.9)" : " (> 0.9)");
    std::string d4 = "; gamma=4 medians:";
    for (const auto& type : core) d4 += " " + ex::display_name(type) + " " + fmt(r.med(4.0, type, 1));
    out.confounding.detail += d4;
  }

  // gamma = 5: balancing and the multi-step comparison share the data
  std::vector<double> gaps, bayes_headroom, ratio;
  std::string bal_detail;
  for (int s = 0; s < n_seeds; ++s) {
    const auto c = desk_config(5.0, static_cast<std::uint64_t>(s));
    const auto d = r.data(c);
    const auto br = ex::make_branches(d.test, {5}, c);
    const auto m = r.train("crn", {5}, static_cast<std::uint64_t>(s), d);
    r.evaluate(m, d, br, c);
    const auto msm = r.train("msm", {5}, static_cast<std::uint64_t>(s), d);
    r.evaluate(msm, d, br, c);
    const auto enc = ex::load_encoder(m.checkpoint);
    const auto b = eval::balancing_diagnostic(enc, d.train, d.test);
    ex::add_balancing(r.report, b, "CRN", {c.gamma_c, c.gamma_r, c.seed});
    gaps.push_back(b.history_accuracy - b.repr_accuracy);
    // best accuracy any classifier can reach: the true policy's most likely class
    double acc = 0.0, n = 0.0;
    for (const auto& tr : d.test)
      for (int t = 0; t < tr.length(); ++t) {
        const auto p = sim::treatment_probabilities(sim::mean_recent_diameter(tr.volume, t, c.diameter_window), c);
        acc += std::max({(1 - p.chemo) * (1 - p.radio), p.chemo * (1 - p.radio), (1 - p.chemo) * p.radio,
                         p.chemo * p.radio});
        n += 1.0;
      }
    bayes_headroom.push_back(100.0 * acc / n - b.majority_rate);
    bal_detail += " seed " + std::to_string(s) + ": history " + fmt(b.history_accuracy, 2) + " repr " +
                  fmt(b.repr_accuracy, 2) + " majority " + fmt(b.majority_rate, 2) + " bayes " +
                  fmt(100.0 * acc / n, 2) + ";";
    const double crn5 = r.report.values(5.0, 5.0, "CRN", 5, "rmse").back();
    const double msm5 = r.report.values(5.0, 5.0, "MSM", 5, "rmse").back();
    ratio.push_back(msm5 / crn5);
    std::cerr << "  gamma 5 seed " << s << " CRN tau5 " << fmt(crn5) << " MSM tau5 " << fmt(msm5) << "\n";
  }
  out.balancing.pass = median(gaps) >= 5.0;
  out.balancing.detail = "median (history - repr) " + fmt(median(gaps), 2) + " points;" + bal_detail +
                         " median headroom of the true policy over majority " + fmt(median(bayes_headroom), 2) +
                         " points";
  const double crn5 = r.med(5.0, "crn", 5), msm5 = r.med(5.0, "msm", 5);
  out.multi_step.pass = crn5 <= msm5 / 1.5;
  out.multi_step.detail = "tau=5 medians: CRN " + fmt(crn5) + " MSM " + fmt(msm5) + " (MSM/CRN per seed:";
  for (double x : ratio) out.multi_step.detail += " " + fmt(x, 2);
  out.multi_step.detail += ")";

  std::cerr << "  training seconds:";
  for (const auto& [k, v] : r.seconds) std::cerr << " " << k << " " << fmt(v, 0);
  std::cerr << "\n";
  report = r.report;
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"acceptance run"};
  std::string out;
  int seeds = 3;
  bool strict = false;
  app.add_option("--out", out, "directory for acceptance_metrics.csv");
  app.add_option("--seeds", seeds, "seeds per setting")->check(CLI::PositiveNumber);
  app.add_flag("--strict", strict, "fail on known-red criteria too");
  CLI11_PARSE(app, argc, argv);

  struct Criterion {
    int id;
    std::string name;
    std::function<Outcome()> run;
  };
  eval::MetricsReport report;
  Learned learned;
  bool learned_done = false;
  auto lazy = [&]() -> Learned& {
    if (!learned_done) {
      learned = learned_criteria(seeds, report);
      learned_done = true;
    }
    return learned;
  };
  const std::vector<Criterion> crit{
      {1, "autodiff_oracle", autodiff_oracle},
      {2, "grl_contract", grl_contract},
      {3, "simulator_policy", simulator_policy},
      {4, "factual_branch_consistency", factual_branch_consistency},
      {5, "iptw_and_wls_oracles", iptw_and_wls},
      {6, "optimal_classifier_closed_form", optimal_classifier},
      {7, "one_step_confounding_sweep", [&] { return lazy().confounding; }},
      {8, "balancing_gap", [&] { return lazy().balancing; }},
      {9, "selection_self_test", selection_self_test},
      {10, "multi_step_vs_msm", [&] { return lazy().multi_step; }},
  };
  int unexpected = 0, red = 0;
  for (const auto& c : crit) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const bool known = kKnownRed.count(c.id) > 0;
    if (!o.pass) {
      ++red;
      if (strict || !known) ++unexpected;
    }
    std::printf("%s %2d %-32s %s [%.1f s]%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(),
                seconds_since(t0), !o.pass && known ? " (known red, see README)" : "");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria pass\n", static_cast<int>(crit.size()) - red, crit.size());
  if (!out.empty()) {
    ex::write_text(std::filesystem::path(out) / "acceptance_metrics.csv", ex::report_csv(report));
  }
  return unexpected ? 1 : 0;
}

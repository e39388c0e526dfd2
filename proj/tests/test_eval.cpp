#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "crn/eval/diagnostics.hpp"
#include "crn/eval/estimators.hpp"
#include "crn/eval/metrics.hpp"
#include "crn/eval/report.hpp"
#include "crn/sim.hpp"
#include "crn/train/engine.hpp"

using namespace crn;
using namespace crn::eval;

namespace {

sim::SimConfig config(double gamma, int n, std::uint64_t seed = 3) {
  sim::SimConfig c;
  c.priors = sim::load_priors(CRN_DEFAULT_PRIORS);
  c.gamma_c = c.gamma_r = gamma;
  c.n_patients = n;
  c.n_test = n;
  c.seed = seed;
  return c;
}

// negated truth: always picks the worst plan
class AntiOracle : public OracleEstimator {
 public:
  using OracleEstimator::OracleEstimator;
  std::string name() const override { return "Anti"; }
  std::vector<double> predict(const Trajectory& tr, int t, const std::vector<std::vector<int>>& plans) const override {
    auto v = OracleEstimator::predict(tr, t, plans);
    for (double& x : v) x = -x;
    return v;
  }
};

// uniform random outcome table
class RandomEstimator : public Estimator {
 public:
  mutable std::mt19937_64 rng{11};
  std::string name() const override { return "Random"; }
  bool supports(int) const override { return true; }
  std::vector<double> predict(const Trajectory&, int, const std::vector<std::vector<int>>& plans) const override {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v;
    for (std::size_t i = 0; i < plans.size(); ++i) v.push_back(u(rng));
    return v;
  }
};

models::CrnHyper tiny() {
  models::CrnHyper h;
  h.hidden = 6;
  h.repr = 6;
  h.fc = 6;
  h.dropout = 0.0;
  return h;
}

std::vector<std::vector<double>> random_distributions(std::mt19937_64& rng, std::size_t K, std::size_t M) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<std::vector<double>> P(K, std::vector<double>(M));
  for (auto& p : P) {
    double s = 0.0;
    for (double& v : p) s += (v = g(rng) + 1e-3);
    for (double& v : p) v /= s;
  }
  return P;
}

}  // namespace

TEST(Rmse, NormalizedByMaxVolume) {
  EXPECT_DOUBLE_EQ(normalized_rmse({11.5}, {0.0}), 1.0);
  EXPECT_DOUBLE_EQ(normalized_rmse({1, 2, 3}, {1, 2, 3}), 0.0);
  // sqrt((9 + 16) / 2) = sqrt(12.5)
  EXPECT_NEAR(normalized_rmse({3, 0}, {0, 4}), 100.0 * std::sqrt(12.5) / 1150.0, 1e-12);
  EXPECT_THROW(normalized_rmse({}, {}), ConfigError);
  EXPECT_THROW(normalized_rmse({1}, {1, 2}), ConfigError);
}

TEST(Rmse, OracleIsExact) {
  const auto c = config(4.0, 20);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  OracleEstimator o(c);
  EXPECT_DOUBLE_EQ(evaluate_one_step(o, te, sim::generate_counterfactuals(te, 1, c)), 0.0);
  EXPECT_DOUBLE_EQ(evaluate_multi_step(o, te, sim::generate_counterfactuals(te, 3, c, 4)), 0.0);
}

TEST(Rmse, ConstantMatchesBruteForce) {
  const auto c = config(2.0, 10);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  const auto br = sim::generate_counterfactuals(te, 1, c);
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& b : br)
    for (double y : b.true_outcomes) {
      s += (y - 7.0) * (y - 7.0);
      ++n;
    }
  EXPECT_NEAR(evaluate_one_step(ConstantEstimator(7.0), te, br), 100.0 * std::sqrt(s / n) / 1150.0, 1e-10);
}

TEST(Rmse, RejectsWrongHorizonAndUnknownPatient) {
  const auto c = config(2.0, 4);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  auto br = sim::generate_counterfactuals(te, 2, c);
  EXPECT_THROW(evaluate_one_step(ConstantEstimator(1.0), te, br), ConfigError);
  br.front().patient_id = 987654;
  EXPECT_THROW(evaluate_multi_step(ConstantEstimator(1.0), te, br), ConfigError);
}

TEST(Selection, AllEqualIsFullyTied) {
  const Selection s = select_treatment_and_timing({5, 5, 5, 5, 5, 5});
  EXPECT_EQ(s.treatment, 0);
  EXPECT_EQ(s.timing, 0);
  EXPECT_EQ(s.tied_treatments, (std::vector<int>{0, 1}));
  EXPECT_EQ(s.tied_timings[0], (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(s.tied_timings[1], (std::vector<int>{0, 1, 2}));
}

TEST(Selection, PicksArmWithGlobalMinimum) {
  const Selection s = select_treatment_and_timing({10, 8, 9, 12, 11, 13});
  EXPECT_EQ(s.treatment, 0);
  EXPECT_EQ(s.timing, 1);
  EXPECT_EQ(s.tied_treatments, std::vector<int>{0});
  const Selection r = select_treatment_and_timing({12, 11, 13, 10, 9, 8});
  EXPECT_EQ(r.treatment, 1);
  EXPECT_EQ(r.timing, 2);
}

TEST(Selection, EpsilonTies) {
  const Selection s = select_treatment_and_timing({8.0005, 8.0001, 9, 10, 10, 10});
  EXPECT_EQ(s.timing, 1);
  EXPECT_EQ(s.tied_timings[0], (std::vector<int>{0, 1}));
  // 0.002 apart is not a tie
  const Selection t = select_treatment_and_timing({8.002, 8.0, 9, 10, 10, 10});
  EXPECT_EQ(t.tied_timings[0], std::vector<int>{1});
  // arms tie when their minima are close
  const Selection a = select_treatment_and_timing({8.0, 9, 8.0008, 9});
  EXPECT_EQ(a.tied_treatments, (std::vector<int>{0, 1}));
  EXPECT_THROW(select_treatment_and_timing({1, 2, 3}), ConfigError);
}

TEST(Selection, TiedTruthAcceptsEitherAnswer) {
  BranchSet b;
  b.tau = 2;
  b.plans = sim::counterfactual_plans(2);
  b.true_outcomes = {8.0005, 8.0001, 9, 10};
  PredictionTable t{{&b, &b}, {{1, 2, 3, 4}, {2, 1, 3, 4}}};
  const auto a = selection_accuracy(t);
  EXPECT_DOUBLE_EQ(a.treatment, 100.0);
  EXPECT_DOUBLE_EQ(a.timing, 100.0);
  PredictionTable w{{&b}, {{5, 5, 1, 5}}};
  const auto aw = selection_accuracy(w);
  EXPECT_DOUBLE_EQ(aw.treatment, 0.0);
  EXPECT_DOUBLE_EQ(aw.timing_conditional, 0.0);
  // timing 0 is right for the true arm even though the arm is wrong
  EXPECT_DOUBLE_EQ(aw.timing, 100.0);
}

TEST(Selection, OracleIsPerfectThroughPipeline) {
  const auto c = config(6.0, 15);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  for (int tau : {2, 3, 5}) {
    const auto br = sim::generate_counterfactuals(te, tau, c, 3);
    std::vector<std::vector<double>> truth;
    std::vector<const BranchSet*> sets;
    for (const auto& b : br) {
      sets.push_back(&b);
      truth.push_back(b.true_outcomes);
    }
    const auto self = selection_accuracy(PredictionTable{sets, truth});
    EXPECT_DOUBLE_EQ(self.treatment, 100.0);
    EXPECT_DOUBLE_EQ(self.timing, 100.0);
    const auto o = selection_accuracy(OracleEstimator(c), te, br);
    EXPECT_DOUBLE_EQ(o.treatment, 100.0);
    EXPECT_DOUBLE_EQ(o.timing, 100.0);
    EXPECT_DOUBLE_EQ(o.timing_conditional, 100.0);
    EXPECT_EQ(o.anchors, br.size());
  }
}

TEST(Selection, ExactSelfConsistencyWithZeroEpsilon) {
  const auto c = config(3.0, 10);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  const auto br = sim::generate_counterfactuals(te, 3, c, 2);
  const auto a = selection_accuracy(OracleEstimator(c), te, br, 0.0);
  EXPECT_DOUBLE_EQ(a.treatment, 100.0);
  EXPECT_DOUBLE_EQ(a.timing, 100.0);
}

TEST(Selection, ConstantPredictionPicksFirstTiming) {
  // all-zero prediction always selects chemo at timing 0; accuracy is then
  // the share of anchors whose truth admits that answer
  const auto c = config(6.0, 15);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  const auto br = sim::generate_counterfactuals(te, 3, c, 2);
  std::size_t ok = 0;
  for (const auto& b : br) {
    const Selection s = select_treatment_and_timing(b.true_outcomes);
    ok += std::find(s.tied_treatments.begin(), s.tied_treatments.end(), 0) != s.tied_treatments.end();
  }
  const auto a = selection_accuracy(ConstantEstimator(0.0), te, br);
  EXPECT_NEAR(a.treatment, 100.0 * ok / br.size(), 1e-9);
}

TEST(Selection, AntiOracleFailsWhereArmsDiffer) {
  const auto c = config(6.0, 15);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  const auto all = sim::generate_counterfactuals(te, 3, c, 2);
  // keep anchors whose best and worst plans sit in different arms, no arm tie
  std::vector<BranchSet> br;
  for (const auto& b : all) {
    const Selection s = select_treatment_and_timing(b.true_outcomes);
    const auto hi = std::max_element(b.true_outcomes.begin(), b.true_outcomes.end()) - b.true_outcomes.begin();
    if (s.tied_treatments.size() == 1 && hi / 3 != s.treatment) br.push_back(b);
  }
  ASSERT_GT(br.size(), 10u);
  const auto a = selection_accuracy(AntiOracle(c), te, br);
  EXPECT_DOUBLE_EQ(a.treatment, 0.0);
}

TEST(Selection, RandomTreatmentNearHalf) {
  BranchSet b;
  b.tau = 3;
  b.plans = sim::counterfactual_plans(3);
  b.true_outcomes = {1, 2, 3, 4, 5, 6};
  std::vector<const BranchSet*> sets(4000, &b);
  RandomEstimator r;
  PredictionTable t;
  t.sets = sets;
  for (std::size_t i = 0; i < sets.size(); ++i) t.predicted.push_back(r.predict(Trajectory{}, 0, b.plans));
  const auto a = selection_accuracy(t);
  EXPECT_NEAR(a.treatment, 50.0, 3.0);
  EXPECT_NEAR(a.timing, 100.0 / 3.0, 3.0);
}

TEST(Selection, ShardInvariance) {
  const auto c = config(5.0, 12);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  const auto br = sim::generate_counterfactuals(te, 2, c);
  ConstantEstimator k(3.0);
  const auto whole = selection_accuracy(k, te, br);
  std::size_t ok = 0;
  const std::size_t half = br.size() / 2;
  std::vector<BranchSet> a(br.begin(), br.begin() + half), b(br.begin() + half, br.end());
  ok += selection_accuracy(k, te, a).treatment_correct;
  ok += selection_accuracy(k, te, b).treatment_correct;
  EXPECT_EQ(ok, whole.treatment_correct);
}

TEST(Balancing, UnconfoundedProbeIsNearMajority) {
  auto c = config(0.0, 120, 9);
  const auto tr = sim::simulate_dataset(c, sim::Split::Train);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  train::TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 32;
  const auto enc = train::train_encoder(tr, te, tiny(), tc);
  ProbeConfig pc;
  pc.epochs = 5;
  const auto r = balancing_diagnostic(enc.model, tr, te, pc);
  EXPECT_LT(r.history_accuracy, r.majority_rate + 4.0);
  EXPECT_LT(r.repr_accuracy, r.majority_rate + 4.0);
  EXPECT_GT(r.majority_rate, 24.0);
  EXPECT_EQ(r.train_rows, [&] {
    std::size_t n = 0;
    for (const auto& t : tr) n += t.length();
    return n;
  }());
}

TEST(Balancing, ConfoundedHistoryIsPredictive) {
  auto c = config(8.0, 150, 9);
  const auto tr = sim::simulate_dataset(c, sim::Split::Train);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  const models::Standardizer s = models::Standardizer::fit(tr);
  ProbeConfig pc;
  pc.epochs = 10;
  const double acc = probe_accuracy(raw_history_rows(tr, s, 5), raw_history_rows(te, s, 5), pc);
  std::size_t none = 0, n = 0;
  for (const auto& t : te)
    for (int a : t.treatment) {
      none += a == 0;
      ++n;
    }
  EXPECT_GT(acc, 100.0 * none / n - 1.0);
}

TEST(Balancing, UntrainedRepresentationAddsNothing) {
  auto c = config(8.0, 150, 9);
  const auto tr = sim::simulate_dataset(c, sim::Split::Train);
  const auto te = sim::simulate_dataset(c, sim::Split::Test);
  ProbeConfig pc;
  pc.epochs = 10;
  double margin = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const models::CrnEncoder enc(tiny(), models::Standardizer::fit(tr), seed);
    const auto r = balancing_diagnostic(enc, tr, te, pc);
    margin += r.history_accuracy - r.repr_accuracy;
  }
  // Monte Carlo tolerance: one point per seed
  EXPECT_GE(margin / 3.0, -1.0);
}

TEST(Export, RowsColumnsAndDeterminism) {
  auto c = config(2.0, 10);
  const auto tr = sim::simulate_dataset(c, sim::Split::Train);
  models::CrnEncoder enc(tiny(), models::Standardizer::fit(tr), 1);
  std::ostringstream a, b;
  export_representations(a, enc, tr);
  export_representations(b, enc, tr);
  EXPECT_EQ(a.str(), b.str());
  std::istringstream in(a.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("patient_id,t,phi_0,", 0), 0u);
  std::size_t rows = 0, expect = 0;
  for (const auto& t : tr) expect += t.length();
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')), 2 + tiny().repr);
  }
  EXPECT_EQ(rows, expect);
}

TEST(OptimalClassifier, ClosedFormMatchesOptimization) {
  std::mt19937_64 rng(21);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t K = 2 + inst % 3, M = 3 + inst % 6;
    const auto P = random_distributions(rng, K, M);
    const auto chk = verify_optimal_classifier(P);
    EXPECT_LT(chk.max_tv, 1e-3) << "instance " << inst;
    EXPECT_NEAR(chk.closed_objective, chk.optimized_objective, 1e-6);
  }
}

TEST(OptimalClassifier, EqualDistributionsGiveMinusKLogK) {
  for (std::size_t K : {2u, 3u, 4u}) {
    std::vector<std::vector<double>> P(K, {0.2, 0.3, 0.5});
    const auto chk = verify_optimal_classifier(P);
    EXPECT_NEAR(chk.closed_objective, -static_cast<double>(K) * std::log(static_cast<double>(K)), 1e-6);
    EXPECT_NEAR(chk.optimized_objective, -static_cast<double>(K) * std::log(static_cast<double>(K)), 1e-6);
  }
}

TEST(OptimalClassifier, HandWorkedPair) {
  const auto G = optimal_classifier({{0.8, 0.2}, {0.4, 0.6}});
  EXPECT_NEAR(G[0][0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(G[1][0], 0.25, 1e-12);
  EXPECT_NEAR(G[1][1], 0.75, 1e-12);
}

TEST(OptimalClassifier, BeatsRandomTables) {
  std::mt19937_64 rng(4);
  const auto P = random_distributions(rng, 3, 5);
  const double best = classifier_objective(P, optimal_classifier(P));
  for (int i = 0; i < 100; ++i) {
    const auto G = random_distributions(rng, 5, 3);  // points x K rows, each normalized
    EXPECT_GE(best, classifier_objective(P, G));
  }
}

TEST(OptimalClassifier, RejectsBadInput) {
  EXPECT_THROW(verify_optimal_classifier({{0.5, 0.6}, {0.5, 0.5}}), ConfigError);
  EXPECT_THROW(verify_optimal_classifier({{1.0}}), ConfigError);
  EXPECT_THROW(verify_optimal_classifier({{0.5, 0.5}, {1.0}}), ConfigError);
}

TEST(Report, CsvRoundTrip) {
  MetricsReport r;
  r.add(4, 4, "CRN", 1, 1, "rmse", 0.123456789012345, 800);
  r.add(0, 5, "MSM", 2, 5, "treatment_accuracy", 87.5, 100);
  std::stringstream s;
  r.write_csv(s);
  const auto back = MetricsReport::read_csv(s);
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[0].value, 0.123456789012345);
  EXPECT_EQ(back.rows[1].model, "MSM");
  EXPECT_EQ(back.rows[1].tau, 5);
  EXPECT_EQ(back.rows[1].gamma_r, 5.0);
  EXPECT_EQ(back.values(4, 4, "CRN", 1, "rmse"), std::vector<double>{0.123456789012345});
  EXPECT_THROW(r.add(0, 0, "X", 0, 1, "rmse", std::nan(""), 1), NumericalError);
  EXPECT_THROW(r.add(0, 0, "X", 0, 1, "timing_accuracy", 101, 1), NumericalError);
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 2, 3}), 2.5);
}

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "crn/sim.hpp"

using namespace crn;
using namespace crn::sim;

namespace {

PriorConfig default_priors() { return load_priors(CRN_DEFAULT_PRIORS); }

SimConfig small_config(double gamma, int n, std::uint64_t seed = 7) {
  SimConfig c;
  c.priors = default_priors();
  c.gamma_c = c.gamma_r = gamma;
  c.n_patients = n;
  c.seed = seed;
  return c;
}

PatientParams flat_params() {
  PatientParams p;
  p.K = 1000.0;
  return p;
}

}  // namespace

TEST(Volume, FixedPointAtCarryingCapacity) {
  PatientParams p = flat_params();
  p.rho = 0.3;
  EXPECT_DOUBLE_EQ(step_volume(p.K, 0.0, 0.0, p, 0.0), p.K);
}

TEST(Volume, AllTermsOff) {
  EXPECT_DOUBLE_EQ(step_volume(42.0, 3.0, 2.0, flat_params(), 0.0), 42.0);
}

TEST(Volume, HandEvaluatedGrowth) {
  PatientParams p = flat_params();
  p.K = std::numbers::e * 100.0;
  p.rho = 0.1;
  EXPECT_NEAR(step_volume(100.0, 0.0, 0.0, p, 0.0), 110.0, 1e-12);
}

TEST(Volume, FloorAndDomain) {
  PatientParams p = flat_params();
  p.beta_c = 1.0;
  EXPECT_DOUBLE_EQ(step_volume(10.0, 5.0, 0.0, p, 0.0), kVolumeFloor);
  EXPECT_THROW(step_volume(0.0, 0.0, 0.0, p, 0.0), NumericalError);
}

TEST(Chemo, DoseAndDecay) {
  EXPECT_DOUBLE_EQ(update_chemo_concentration(0.0, true), 5.0);
  EXPECT_DOUBLE_EQ(update_chemo_concentration(5.0, false), 2.5);
  EXPECT_DOUBLE_EQ(update_chemo_concentration(5.0, true), 7.5);
  double c = 7.0;
  for (int i = 0; i < 20; ++i) {
    const double next = update_chemo_concentration(c, false);
    EXPECT_EQ(next, c / 2.0);
    c = next;
  }
}

TEST(Diameter, SphereConversions) {
  EXPECT_NEAR(diameter_from_volume(1150.0), 13.0, 0.01);
  EXPECT_NEAR(diameter_from_volume(4.0 * std::numbers::pi / 3.0), 2.0, 1e-12);
  EXPECT_NEAR(diameter_from_volume(1150.0 / 8.0), diameter_from_volume(1150.0) / 2.0, 1e-12);
  EXPECT_NEAR(volume_from_diameter(diameter_from_volume(321.0)), 321.0, 1e-9);
}

TEST(Policy, MidpointIsHalf) {
  SimConfig c;
  for (double g : {0.0, 1.0, 5.0, 10.0}) {
    c.gamma_c = c.gamma_r = g;
    const auto p = treatment_probabilities(c.d_max / 2.0, c);
    EXPECT_DOUBLE_EQ(p.chemo, 0.5);
    EXPECT_DOUBLE_EQ(p.radio, 0.5);
  }
}

TEST(Policy, ReferenceProbabilities) {
  SimConfig c;
  c.gamma_c = 10.0;
  const double p10 = treatment_probabilities(0.75 * c.d_max, c).chemo;
  EXPECT_GE(p10, 0.920);
  EXPECT_LE(p10, 0.925);
  c.gamma_c = 1.0;
  const double p1 = treatment_probabilities(0.75 * c.d_max, c).chemo;
  EXPECT_GE(p1, 0.560);
  EXPECT_LE(p1, 0.563);
}

TEST(Policy, MonotoneInDiameter) {
  SimConfig c;
  c.gamma_c = 3.0;
  double prev = -1.0;
  for (double d = 0.0; d <= 13.0; d += 0.25) {
    const double p = treatment_probabilities(d, c).chemo;
    EXPECT_GT(p, prev);
    prev = p;
  }
  c.gamma_c = 0.0;
  for (double d = 0.0; d <= 13.0; d += 0.5) EXPECT_EQ(treatment_probabilities(d, c).chemo, 0.5);
}

TEST(Priors, DefaultFileValidates) {
  const PriorConfig p = default_priors();
  EXPECT_EQ(p.stages.size(), 5u);
  EXPECT_NEAR(p.K.mean, volume_from_diameter(30.0), 1e-9);
  const json round = priors_to_json(p);
  EXPECT_EQ(priors_to_json(priors_from_json(round)), round);
}

TEST(Priors, RejectsBadProbabilities) {
  json j = priors_to_json(default_priors());
  j["stages"][0]["probability"] = 0.5;
  EXPECT_THROW(priors_from_json(j), ConfigError);
  j = priors_to_json(default_priors());
  j["rho"]["std"] = -1.0;
  EXPECT_THROW(priors_from_json(j), ConfigError);
}

TEST(Priors, SubgroupAdjustment) {
  const PriorConfig p = default_priors();
  EXPECT_DOUBLE_EQ(adjusted_beta_c_mean(p, 2), p.beta_c.mean);
  EXPECT_DOUBLE_EQ(adjusted_alpha_r_mean(p, 2), p.alpha_r.mean);
  EXPECT_DOUBLE_EQ(adjusted_beta_c_mean(p, 3), 1.1 * p.beta_c.mean);
  EXPECT_DOUBLE_EQ(adjusted_alpha_r_mean(p, 3), p.alpha_r.mean);
  EXPECT_DOUBLE_EQ(adjusted_alpha_r_mean(p, 1), 1.1 * p.alpha_r.mean);
  EXPECT_DOUBLE_EQ(adjusted_beta_c_mean(p, 1), p.beta_c.mean);
}

TEST(Priors, SampledParametersAreValid) {
  const PriorConfig pc = default_priors();
  Rng rng = make_rng({11});
  int counts[4] = {0, 0, 0, 0};
  double beta_c_sum[4] = {0, 0, 0, 0};
  for (int i = 0; i < 30000; ++i) {
    const PatientParams p = sample_patient_params(pc, rng);
    ASSERT_GE(p.subgroup, 1);
    ASSERT_LE(p.subgroup, 3);
    ASSERT_GE(p.rho, 0.0);
    ASSERT_GE(p.beta_c, 0.0);
    ASSERT_GE(p.alpha_r, 0.0);
    ASSERT_DOUBLE_EQ(p.beta_r, p.alpha_r / 10.0);
    ASSERT_GT(p.K, 0.0);
    ++counts[p.subgroup];
    beta_c_sum[p.subgroup] += p.beta_c;
  }
  for (int g = 1; g <= 3; ++g) EXPECT_NEAR(counts[g] / 30000.0, 1.0 / 3.0, 0.015);
  // beta_c std is tiny relative to its mean, so truncation is negligible.
  EXPECT_NEAR(beta_c_sum[3] / counts[3], 1.1 * pc.beta_c.mean, 1e-4);
  EXPECT_NEAR(beta_c_sum[2] / counts[2], pc.beta_c.mean, 1e-4);
}

TEST(Priors, InitialDiameterWithinStageBounds) {
  const PriorConfig pc = default_priors();
  Rng rng = make_rng({12});
  for (int i = 0; i < 5000; ++i) {
    const auto [stage, d] = sample_initial_diameter(pc, rng);
    ASSERT_LT(stage, pc.stages.size());
    ASSERT_GE(d, pc.stages[stage].min_diameter);
    ASSERT_LT(d, pc.stages[stage].max_diameter);
  }
}

TEST(SimConfigJson, NamesBadFields) {
  const PriorConfig p = default_priors();
  try {
    sim_config_from_json(json{{"gamma_c", "high"}}, p);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("gamma_c"), std::string::npos);
  }
  EXPECT_THROW(sim_config_from_json(json{{"gamma_r", -1.0}}, p), ConfigError);
  EXPECT_THROW(sim_config_from_json(json{{"gama", 1.0}}, p), ConfigError);
  const SimConfig c = sim_config_from_json(json{{"gamma_c", 4.0}, {"seed", 9}}, p);
  EXPECT_EQ(c.gamma_c, 4.0);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.effective_delta_c(), 6.5);
}

TEST(Simulate, UnconfoundedRateIsHalf) {
  SimConfig c = small_config(0.0, 2000);
  const auto data = simulate_dataset(c);
  long n = 0, chemo = 0, radio = 0;
  for (const auto& tr : data) {
    for (int a : tr.treatment) {
      ++n;
      chemo += has_chemo(a);
      radio += has_radio(a);
    }
  }
  ASSERT_GE(n, 100000);
  const double se = std::sqrt(0.25 / static_cast<double>(n));
  EXPECT_LT(std::abs(static_cast<double>(chemo) / n - 0.5), 3 * se);
  EXPECT_LT(std::abs(static_cast<double>(radio) / n - 0.5), 3 * se);
}

TEST(Simulate, StrongConfoundingTreatsLargeTumours) {
  SimConfig c = small_config(10.0, 1500);
  const auto data = simulate_dataset(c);
  long n = 0, chemo = 0;
  for (const auto& tr : data) {
    for (int t = 0; t < tr.length(); ++t) {
      if (mean_recent_diameter(tr.volume, t, c.diameter_window) > 0.75 * c.d_max) {
        ++n;
        chemo += has_chemo(tr.treatment[static_cast<std::size_t>(t)]);
      }
    }
  }
  ASSERT_GT(n, 100);
  EXPECT_GT(static_cast<double>(chemo) / n, 0.85);
}

TEST(Simulate, DeterministicAndPositive) {
  SimConfig c = small_config(5.0, 300);
  const auto a = simulate_dataset(c);
  const auto b = simulate_dataset(c);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].volume, b[i].volume);
    EXPECT_EQ(a[i].treatment, b[i].treatment);
    EXPECT_EQ(a[i].chemo_conc, b[i].chemo_conc);
    ASSERT_GE(a[i].length(), 1);
    ASSERT_LE(a[i].length(), c.max_timesteps);
    for (double v : a[i].volume) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GT(v, 0.0);
    }
  }
  std::ostringstream x, y;
  write_dataset_csv(x, a);
  write_dataset_csv(y, b);
  EXPECT_EQ(x.str(), y.str());
}

TEST(Simulate, DeathEndsTrajectory) {
  SimConfig c = small_config(0.0, 500);
  int early = 0;
  for (const auto& tr : simulate_dataset(c)) {
    if (tr.length() < c.max_timesteps) {
      ++early;
      EXPECT_GE(diameter_from_volume(tr.volume.back()), c.d_max);
    }
    for (int t = 0; t + 1 < tr.length(); ++t) {
      EXPECT_LT(diameter_from_volume(tr.volume[static_cast<std::size_t>(t) + 1]), c.d_max);
    }
  }
  EXPECT_GT(early, 0);
}

TEST(Simulate, SplitsAreDisjoint) {
  SimConfig c = small_config(2.0, 5);
  c.n_validation = 5;
  const auto tr = simulate_dataset(c, Split::Train);
  const auto va = simulate_dataset(c, Split::Validation);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    EXPECT_NE(tr[i].patient_id, va[i].patient_id);
    EXPECT_NE(tr[i].volume[0], va[i].volume[0]);
  }
}

TEST(Simulate, ChemoConcentrationFollowsDoses) {
  SimConfig c = small_config(3.0, 50);
  for (const auto& tr : simulate_dataset(c)) {
    double prev = 0.0;
    for (int t = 0; t < tr.length(); ++t) {
      const double expect = update_chemo_concentration(prev, has_chemo(tr.treatment[t]));
      EXPECT_EQ(tr.chemo_conc[t], expect);
      EXPECT_EQ(tr.carried_conc(t), prev);
      prev = expect;
    }
  }
}

TEST(Counterfactual, PlanShapes) {
  EXPECT_EQ(counterfactual_plans(1).size(), 4u);
  const auto p3 = counterfactual_plans(3);
  ASSERT_EQ(p3.size(), 6u);
  int chemo_plans = 0, radio_plans = 0;
  for (const auto& plan : p3) {
    ASSERT_EQ(plan.size(), 3u);
    int nonzero = 0;
    for (int a : plan) {
      if (a != kNone) {
        ++nonzero;
        EXPECT_TRUE(a == kChemo || a == kRadio);
        chemo_plans += a == kChemo;
        radio_plans += a == kRadio;
      }
    }
    EXPECT_EQ(nonzero, 1);
  }
  EXPECT_EQ(chemo_plans, 3);
  EXPECT_EQ(radio_plans, 3);
  EXPECT_EQ(plan_from_string(plan_to_string(p3[4])), p3[4]);
  EXPECT_THROW(counterfactual_plans(0), ConfigError);
  EXPECT_THROW(plan_from_string("1-7"), ConfigError);
}

TEST(Counterfactual, FactualBranchReproducesOutcome) {
  SimConfig c = small_config(5.0, 100);
  for (const auto& tr : simulate_dataset(c)) {
    for (int t = 0; t < tr.length(); ++t) {
      const BranchSet b = generate_counterfactuals(tr, t, 1, c);
      const int a = tr.treatment[static_cast<std::size_t>(t)];
      EXPECT_EQ(b.true_outcomes[static_cast<std::size_t>(a)], tr.outcome(t));
    }
  }
}

TEST(Counterfactual, ZeroSensitivityBranchesCoincide) {
  SimConfig c = small_config(0.0, 10);
  for (auto tr : simulate_dataset(c)) {
    tr.params->beta_c = tr.params->alpha_r = tr.params->beta_r = 0.0;
    for (int tau : {1, 4}) {
      const BranchSet b = generate_counterfactuals(tr, 0, tau, c);
      for (double y : b.true_outcomes) EXPECT_EQ(y, b.true_outcomes[0]);
    }
  }
}

TEST(Counterfactual, SharedPrefixSharesOutcomes) {
  SimConfig c = small_config(5.0, 20);
  for (const auto& tr : simulate_dataset(c)) {
    const std::vector<int> p1 = {kNone, kNone, kChemo, kNone};
    const std::vector<int> p2 = {kNone, kNone, kRadio, kBoth};
    const auto a = rollout(tr, *tr.params, 0, p1, c);
    const auto b = rollout(tr, *tr.params, 0, p2, c);
    EXPECT_EQ(a[0], b[0]);
    EXPECT_EQ(a[1], b[1]);
  }
}

TEST(Io, DatasetRoundTrip) {
  SimConfig c = small_config(4.0, 40);
  const auto data = simulate_dataset(c);
  std::stringstream ss;
  write_dataset_csv(ss, data);
  const auto back = read_dataset_csv(ss);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].patient_id, data[i].patient_id);
    EXPECT_EQ(back[i].subgroup, data[i].subgroup);
    EXPECT_EQ(back[i].volume, data[i].volume);
    EXPECT_EQ(back[i].chemo_conc, data[i].chemo_conc);
    EXPECT_EQ(back[i].treatment, data[i].treatment);
  }
}

TEST(Io, BranchRoundTripAndErrors) {
  SimConfig c = small_config(4.0, 5);
  const auto sets = generate_counterfactuals(simulate_dataset(c), 3, c);
  std::stringstream ss;
  write_branches_csv(ss, sets);
  const auto back = read_branches_csv(ss);
  ASSERT_EQ(back.size(), sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    EXPECT_EQ(back[i].plans, sets[i].plans);
    EXPECT_EQ(back[i].true_outcomes, sets[i].true_outcomes);
  }
  std::stringstream bad("patient_id,t\n");
  EXPECT_THROW(read_dataset_csv(bad), ConfigError);
  std::stringstream gap(std::string(kDatasetHeader) + "\n1,1,2.0,0,0,2.0,1\n");
  EXPECT_THROW(read_dataset_csv(gap), ConfigError);
}

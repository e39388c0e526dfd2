// crn_cli: simulate, train, evaluate, sweep, search, export-repr.
// Exit codes: 0 ok, 2 config error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "crn/experiment/pipeline.hpp"
#include "crn/platform.hpp"
#include "crn/train/search.hpp"

using namespace crn;
using namespace crn::experiment;
using nlohmann::json;

namespace {

struct SimFlags {
  std::string config_path;
  std::string priors_path = CRN_DEFAULT_PRIORS;
  std::optional<double> gamma, gamma_c, gamma_r;
  std::optional<int> n, n_validation, n_test, max_t;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* s) {
    s->add_option("--config", config_path, "SimConfig JSON file");
    s->add_option("--priors", priors_path, "prior file")->capture_default_str();
    s->add_option("--gamma", gamma, "sets gamma_c = gamma_r");
    s->add_option("--gamma-c", gamma_c, "chemotherapy confounding");
    s->add_option("--gamma-r", gamma_r, "radiotherapy confounding");
    s->add_option("--n", n, "training patients");
    s->add_option("--n-validation", n_validation, "validation patients");
    s->add_option("--n-test", n_test, "test patients");
    s->add_option("--max-t", max_t, "max timesteps");
    s->add_option("--seed", seed, "simulation seed");
  }

  sim::SimConfig resolve() const {
    const sim::PriorConfig priors = sim::load_priors(priors_path);
    json j = json::object();
    if (!config_path.empty()) j = read_json(config_path);
    if (gamma) j["gamma_c"] = j["gamma_r"] = *gamma;
    if (gamma_c) j["gamma_c"] = *gamma_c;
    if (gamma_r) j["gamma_r"] = *gamma_r;
    if (n) j["n_patients"] = *n;
    if (n_validation) j["n_validation"] = *n_validation;
    if (n_test) j["n_test"] = *n_test;
    if (max_t) j["max_timesteps"] = *max_t;
    if (seed) j["seed"] = *seed;
    return sim::sim_config_from_json(j, priors);
  }
};

struct SpecFlags {
  std::string spec_path;
  std::optional<std::string> model;
  std::optional<int> epochs, decoder_epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda_max;
  std::vector<int> taus;

  void attach(CLI::App* s, bool with_model = true) {
    s->add_option("--spec", spec_path, "model spec JSON");
    if (with_model) s->add_option("--model", model, "crn, crn_lambda0, rnn, linear, msm or rmsn");
    s->add_option("--epochs", epochs, "encoder epochs");
    s->add_option("--decoder-epochs", decoder_epochs, "decoder epochs");
    s->add_option("--train-seed", seed, "training seed");
    s->add_option("--lambda-max", lambda_max, "adversarial weight ceiling");
    s->add_option("--tau", taus, "horizons, e.g. 1,3,5")->delimiter(',');
  }

  ModelSpec resolve() const {
    ModelSpec m = ModelSpec::desk();
    if (!spec_path.empty()) m = ModelSpec::from_json(read_json(spec_path));
    if (model) m.type = *model;
    if (epochs) m.encoder_train.epochs = *epochs;
    if (decoder_epochs) m.decoder_train.epochs = *decoder_epochs;
    if (seed) m.encoder_train.seed = m.decoder_train.seed = *seed;
    if (lambda_max) m.encoder_train.lambda_max = m.decoder_train.lambda_max = *lambda_max;
    if (!taus.empty()) m.taus = taus;
    m.validate();
    return m;
  }
};

void warn(const std::string& s) { std::cerr << "warning: " << s << '\n'; }

/// Data files are checked against the hashes their manifest recorded.
void verify_data_hashes(const DataDir& d) {
  if (!d.manifest.contains("files")) return;
  for (auto it = d.manifest.at("files").begin(); it != d.manifest.at("files").end(); ++it) {
    const fs::path p = d.dir / it.key();
    if (!fs::exists(p)) continue;
    if (content_hash(read_text(p)) != it.value().get<std::string>()) warn(p.string() + " does not match its manifest hash");
  }
}

json base_manifest(const std::string& kind) { return {{"version", kVersion}, {"kind", kind}}; }

// ---------------------------------------------------------------------------

int cmd_simulate(const SimFlags& f, const std::vector<int>& taus, const std::string& out) {
  const sim::SimConfig c = f.resolve();
  const Splits s = simulate_splits(c);
  const json m = write_data_dir(out, c, s, make_branches(s.test, taus, c));
  std::cout << "wrote " << s.train.size() << '/' << s.validation.size() << '/' << s.test.size()
            << " patients to " << out << " (config " << m.at("config_hash").get<std::string>() << ")\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const SpecFlags& f, const std::string& out) {
  const ModelSpec spec = f.resolve();
  const DataDir d = read_data_dir(data_dir);
  verify_data_hashes(d);
  const TrainedModel t = train_model(spec, d.splits);
  write_json(fs::path(out) / "checkpoint.json", t.checkpoint);
  write_text(fs::path(out) / "train_log.csv", train_log_csv(t.log));
  if (!t.decoder_log.empty()) write_text(fs::path(out) / "decoder_log.csv", train_log_csv(t.decoder_log));
  write_json(fs::path(out) / "resolved_spec.json", spec.to_json());
  json m = base_manifest("train");
  m["spec"] = spec.to_json();
  m["spec_hash"] = content_hash(spec.to_json().dump());
  m["data_dir"] = fs::absolute(data_dir).string();
  m["data_manifest_hash"] = d.hash();
  write_json(fs::path(out) / "manifest.json", m);
  std::cout << "trained " << spec.type << " -> " << out << "/checkpoint.json\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& data_dir, std::vector<int> taus, bool oracle,
                 bool balancing, const std::string& out) {
  const DataDir d = read_data_dir(data_dir);
  verify_data_hashes(d);
  std::unique_ptr<eval::Estimator> model;
  json ckpt;
  std::vector<Trajectory> test = d.splits.test;
  if (oracle) {
    model = std::make_unique<eval::OracleEstimator>(d.config);
    test = sim::simulate_dataset(d.config, sim::Split::Test);  // carries simulator parameters
  } else {
    if (ckpt_path.empty()) throw ConfigError("evaluate: --checkpoint or --oracle is required");
    ckpt = read_json(ckpt_path);
    model = load_estimator(ckpt);
    if (taus.empty()) taus = ckpt.at("spec").at("taus").get<std::vector<int>>();
  }
  if (taus.empty()) taus = {1};
  std::map<int, std::vector<sim::BranchSet>> branches;
  for (int tau : taus) branches[tau] = d.branches(tau);
  const CellKey key{d.config.gamma_c, d.config.gamma_r, d.config.seed};
  std::vector<int> skipped;
  eval::MetricsReport r = evaluate_model(*model, test, branches, key, &skipped);
  for (int tau : skipped) warn(model->name() + " does not predict tau = " + std::to_string(tau) + "; skipped");
  if (balancing) {
    if (oracle) throw ConfigError("evaluate: --balancing needs a CRN checkpoint");
    add_balancing(r, eval::balancing_diagnostic(load_encoder(ckpt), d.splits.train, d.splits.test), model->name(), key);
  }
  write_text(fs::path(out) / "metrics.csv", report_csv(r));
  write_json(fs::path(out) / "metrics.json", r.to_json());
  json m = base_manifest("evaluate");
  m["checkpoint"] = oracle ? json("oracle") : json(fs::absolute(ckpt_path).string());
  m["data_dir"] = fs::absolute(data_dir).string();
  m["data_manifest_hash"] = d.hash();
  m["taus"] = taus;
  write_json(fs::path(out) / "manifest.json", m);
  r.write_csv(std::cout);
  return 0;
}

struct SweepFlags {
  std::vector<double> gammas;
  std::vector<std::string> pairs;
  std::vector<std::string> models{"crn", "crn_lambda0"};
  std::vector<std::uint64_t> seeds{0};
  bool resume = false;
  bool balancing = false;
};

std::vector<std::pair<double, double>> sweep_grid(const SweepFlags& f) {
  std::vector<std::pair<double, double>> g;
  for (double x : f.gammas) g.emplace_back(x, x);
  for (const std::string& p : f.pairs) {
    const auto colon = p.find(':');
    if (colon == std::string::npos) throw ConfigError("--pairs entries look like gamma_c:gamma_r, got '" + p + "'");
    g.emplace_back(sim::parse_double(p.substr(0, colon), "--pairs"), sim::parse_double(p.substr(colon + 1), "--pairs"));
  }
  if (g.empty()) throw ConfigError("sweep: give --gammas or --pairs");
  return g;
}

std::string cell_name(double gc, double gr, std::uint64_t seed) {
  return "gc" + sim::format_double(gc) + "_gr" + sim::format_double(gr) + "_s" + std::to_string(seed);
}

int cmd_sweep(const SimFlags& sf, const SpecFlags& spf, const SweepFlags& f, const std::string& out) {
  const sim::SimConfig base = sf.resolve();
  const ModelSpec base_spec = spf.resolve();
  for (const auto& m : f.models) check_model_type(m);
  const auto grid = sweep_grid(f);
  eval::MetricsReport all;
  std::ostringstream failures;
  failures << "gamma_c,gamma_r,model,seed,error\n";
  int failed = 0;
  for (const auto& [gc, gr] : grid) {
    for (std::uint64_t seed : f.seeds) {
      sim::SimConfig c = base;
      c.gamma_c = gc;
      c.gamma_r = gr;
      c.seed = seed;
      const fs::path cell = fs::path(out) / "cells" / cell_name(gc, gr, seed);
      std::optional<Splits> data;
      std::map<int, std::vector<sim::BranchSet>> branches;
      auto ensure_data = [&] {
        if (data) return;
        data = simulate_splits(c);
        branches = make_branches(data->test, base_spec.taus, c);
        write_data_dir(cell / "data", c, *data, branches);
      };
      for (const std::string& type : f.models) {
        const fs::path dir = cell / type;
        const fs::path done = dir / "metrics.csv";
        if (f.resume && fs::exists(done) && fs::exists(dir / "DONE")) {
          std::ifstream in(done);
          all.append(eval::MetricsReport::read_csv(in));
          std::cout << "reuse " << dir.string() << '\n';
          continue;
        }
        std::cout << "cell gamma_c=" << gc << " gamma_r=" << gr << " seed=" << seed << " model=" << type << std::endl;
        try {
          ensure_data();
          ModelSpec spec = base_spec;
          spec.type = type;
          spec.encoder_train.seed = spec.decoder_train.seed = seed;
          const TrainedModel t = train_model(spec, *data);
          write_json(dir / "checkpoint.json", t.checkpoint);
          write_text(dir / "train_log.csv", train_log_csv(t.log));
          if (!t.decoder_log.empty()) write_text(dir / "decoder_log.csv", train_log_csv(t.decoder_log));
          const auto est = load_estimator(t.checkpoint);
          const CellKey key{gc, gr, seed};
          eval::MetricsReport r = evaluate_model(*est, data->test, branches, key);
          if (f.balancing && type.rfind("crn", 0) == 0)
            add_balancing(r, eval::balancing_diagnostic(load_encoder(t.checkpoint), data->train, data->test),
                          est->name(), key);
          write_text(done, report_csv(r));
          json m = base_manifest("sweep-cell");
          m["sim_config"] = sim::sim_config_to_json(c);
          m["spec"] = spec.to_json();
          write_json(dir / "manifest.json", m);
          write_text(dir / "DONE", "");
          all.append(r);
        } catch (const std::exception& e) {
          ++failed;
          std::string msg = e.what();
          std::replace(msg.begin(), msg.end(), ',', ';');
          std::replace(msg.begin(), msg.end(), '\n', ' ');
          failures << sim::format_double(gc) << ',' << sim::format_double(gr) << ',' << type << ',' << seed << ','
                   << msg << '\n';
          all.add(gc, gr, display_name(type), seed, 0, "error", 0.0, 0);
          warn("cell failed: " + msg);
        }
      }
    }
  }
  write_text(fs::path(out) / "results.csv", report_csv(all));
  write_json(fs::path(out) / "results.json", all.to_json());
  write_text(fs::path(out) / "failures.csv", failures.str());
  json m = base_manifest("sweep");
  m["sim_config"] = sim::sim_config_to_json(base);
  m["spec"] = base_spec.to_json();
  json g = json::array();
  for (const auto& [gc, gr] : grid) g.push_back({gc, gr});
  m["grid"] = g;
  m["models"] = f.models;
  m["seeds"] = f.seeds;
  write_json(fs::path(out) / "manifest.json", m);
  std::cout << "results: " << (fs::path(out) / "results.csv").string() << " (" << failed << " failed cells)\n";
  return 0;
}

int cmd_search(const std::string& data_dir, const std::string& target, const std::string& ckpt_path, const SpecFlags& sf,
               std::optional<std::size_t> iters, std::size_t workers, const std::string& out) {
  const DataDir d = read_data_dir(data_dir);
  verify_data_hashes(d);
  const ModelSpec spec = sf.resolve();
  train::SearchResult r;
  if (target == "encoder") {
    r = train::search_encoder(d.splits.train, d.splits.validation, spec.encoder_train, iters.value_or(50),
                              train::SearchSpace::encoder(), workers, spec.type != "crn_lambda0");
  } else if (target == "decoder") {
    if (ckpt_path.empty()) throw ConfigError("search --target decoder needs --checkpoint with a trained encoder");
    const models::CrnEncoder enc = load_encoder(read_json(ckpt_path));
    train::TrainConfig dc = spec.decoder_train;
    dc.tau_max = std::max(2, spec.max_tau());
    const auto wt = train::make_decoder_windows(d.splits.train, train::extract_representations(enc, d.splits.train), dc.tau_max);
    const auto wv = train::make_decoder_windows(d.splits.validation,
                                                train::extract_representations(enc, d.splits.validation), dc.tau_max);
    r = train::search_decoder(wt, wv, enc.hp.repr, enc.stats, dc, iters.value_or(30), train::SearchSpace::decoder(),
                              workers);
  } else {
    throw ConfigError("search --target must be encoder or decoder");
  }
  std::ostringstream lb;
  train::write_leaderboard_csv(lb, r);
  write_text(fs::path(out) / "leaderboard.csv", lb.str());
  const auto& b = r.best_row();
  json best = {{"trial", b.trial},
               {"learning_rate", b.point.learning_rate},
               {"batch_size", b.point.batch_size},
               {"hyper", b.point.hp.to_json()},
               {"validation_rmse", b.validation_rmse}};
  write_json(fs::path(out) / "best.json", best);
  json m = base_manifest("search");
  m["target"] = target;
  m["spec"] = spec.to_json();
  m["data_manifest_hash"] = d.hash();
  write_json(fs::path(out) / "manifest.json", m);
  std::cout << lb.str();
  return 0;
}

int cmd_export(const std::string& ckpt_path, const std::string& data_dir, const std::string& split,
               const std::string& out) {
  const DataDir d = read_data_dir(data_dir);
  const models::CrnEncoder enc = load_encoder(read_json(ckpt_path));
  const std::vector<Trajectory>* data = nullptr;
  if (split == "train") data = &d.splits.train;
  if (split == "validation") data = &d.splits.validation;
  if (split == "test") data = &d.splits.test;
  if (!data) throw ConfigError("--split must be train, validation or test");
  std::ostringstream os;
  eval::export_representations(os, enc, *data);
  write_text(out, os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Counterfactual recurrent network experiments"};
  app.require_subcommand(1);

  auto* sim_cmd = app.add_subcommand("simulate", "simulate a dataset and its counterfactual branches");
  SimFlags sim_flags;
  sim_flags.attach(sim_cmd);
  std::vector<int> sim_taus{1};
  std::string out;
  sim_cmd->add_option("--tau", sim_taus, "branch horizons")->delimiter(',')->capture_default_str();
  sim_cmd->add_option("--out", out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train one model");
  SpecFlags spec_flags;
  std::string data_dir;
  spec_flags.attach(train_cmd);
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on test branches");
  std::string ckpt;
  std::vector<int> eval_taus;
  bool oracle = false, balancing = false;
  eval_cmd->add_option("--checkpoint", ckpt, "checkpoint.json");
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--tau", eval_taus, "horizons")->delimiter(',');
  eval_cmd->add_flag("--oracle", oracle, "score the simulator itself");
  eval_cmd->add_flag("--balancing", balancing, "add the treatment-probe diagnostic (CRN only)");
  eval_cmd->add_option("--out", out, "output directory")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "simulate, train and evaluate over a confounding grid");
  SimFlags sweep_sim;
  SpecFlags sweep_spec;
  SweepFlags sweep;
  sweep_sim.attach(sweep_cmd);
  sweep_spec.attach(sweep_cmd, false);
  sweep_cmd->add_option("--gammas", sweep.gammas, "symmetric settings")->delimiter(',');
  sweep_cmd->add_option("--pairs", sweep.pairs, "gamma_c:gamma_r settings")->delimiter(',');
  sweep_cmd->add_option("--models", sweep.models, "model types")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--seeds", sweep.seeds, "seeds")->delimiter(',')->capture_default_str();
  sweep_cmd->add_flag("--resume", sweep.resume, "reuse finished cells");
  sweep_cmd->add_flag("--balancing", sweep.balancing, "add the probe diagnostic for CRN models");
  sweep_cmd->add_option("--out", out, "output directory")->required();

  auto* search_cmd = app.add_subcommand("search", "random hyperparameter search");
  SpecFlags search_spec;
  std::string target = "encoder";
  std::optional<std::size_t> iters;
  std::size_t workers = 1;
  search_spec.attach(search_cmd);
  search_cmd->add_option("--data", data_dir, "dataset directory")->required();
  search_cmd->add_option("--target", target, "encoder or decoder")->capture_default_str();
  search_cmd->add_option("--checkpoint", ckpt, "encoder checkpoint (decoder search)");
  search_cmd->add_option("--iters", iters, "trials (default 50 encoder, 30 decoder)");
  search_cmd->add_option("--workers", workers, "parallel trials")->capture_default_str();
  search_cmd->add_option("--out", out, "output directory")->required();

  auto* export_cmd = app.add_subcommand("export-repr", "write encoder representations as CSV");
  std::string split = "test";
  export_cmd->add_option("--checkpoint", ckpt, "CRN checkpoint")->required();
  export_cmd->add_option("--data", data_dir, "dataset directory")->required();
  export_cmd->add_option("--split", split, "train, validation or test")->capture_default_str();
  export_cmd->add_option("--out", out, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim_cmd) return cmd_simulate(sim_flags, sim_taus, out);
    if (*train_cmd) return cmd_train(data_dir, spec_flags, out);
    if (*eval_cmd) return cmd_evaluate(ckpt, data_dir, eval_taus, oracle, balancing, out);
    if (*sweep_cmd) return cmd_sweep(sweep_sim, sweep_spec, sweep, out);
    if (*search_cmd) return cmd_search(data_dir, target, ckpt, search_spec, iters, workers, out);
    if (*export_cmd) return cmd_export(ckpt, data_dir, split, out);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

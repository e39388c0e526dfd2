#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crn/error.hpp"
#include "crn/eval/diagnostics.hpp"
#include "crn/eval/estimators.hpp"
#include "crn/eval/metrics.hpp"
#include "crn/eval/report.hpp"
#include "crn/sim.hpp"
#include "crn/train/engine.hpp"
#include "crn/train/rmsn.hpp"

namespace crn::experiment {

namespace fs = std::filesystem;
using nlohmann::json;
using sim::Trajectory;

inline constexpr const char* kVersion = "crn-0.1.0";

inline const std::vector<std::string>& model_types() {
  static const std::vector<std::string> t{"crn", "crn_lambda0", "rnn", "linear", "msm", "rmsn"};
  return t;
}

inline void check_model_type(const std::string& t) {
  const auto& all = model_types();
  if (std::find(all.begin(), all.end(), t) == all.end()) throw ConfigError("unknown model type '" + t + "'");
}

// ---------------------------------------------------------------------------
// files and hashes

/// FNV-1a, 64 bit; stable across platforms, used only to tag configs.
inline std::string content_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Write to a sibling temp file, then rename over the target.
inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << text;
    if (!out) throw ConfigError("write failed for " + p.string());
  }
  fs::rename(tmp, p);
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

/// Fields of `j` outside `allowed` are rejected so typos do not pass silently.
inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError(what + ": unknown field '" + it.key() + "'");
}

// ---------------------------------------------------------------------------
// model spec

struct ModelSpec {
  std::string type = "crn";
  models::CrnHyper encoder;
  models::CrnHyper decoder;
  models::RnnHyper rnn;             // baseline RNN and the RMSN encoder
  models::RnnHyper propensity;      // RMSN
  models::RnnHyper rmsn_decoder;    // RMSN
  train::TrainConfig encoder_train;
  train::TrainConfig decoder_train;
  std::vector<int> taus{1};

  int max_tau() const { return *std::max_element(taus.begin(), taus.end()); }

  void validate() const {
    check_model_type(type);
    if (taus.empty()) throw ConfigError("taus must not be empty");
    for (int t : taus)
      if (t < 1) throw ConfigError("taus must be >= 1");
    encoder.validate();
    decoder.validate();
    rnn.validate();
    propensity.validate();
    rmsn_decoder.validate();
    encoder_train.validate();
    decoder_train.validate();
  }

  json to_json() const {
    return {{"type", type},
            {"encoder", encoder.to_json()},
            {"decoder", decoder.to_json()},
            {"rnn", rnn.to_json()},
            {"propensity", propensity.to_json()},
            {"rmsn_decoder", rmsn_decoder.to_json()},
            {"encoder_train", encoder_train.to_json()},
            {"decoder_train", decoder_train.to_json()},
            {"taus", taus}};
  }

  /// Missing fields keep `base` values.
  static ModelSpec from_json(const json& j, ModelSpec base = desk()) {
    check_keys(j, {"type", "encoder", "decoder", "rnn", "propensity", "rmsn_decoder", "encoder_train", "decoder_train", "taus"},
               "model spec");
    ModelSpec m = base;
    try {
      if (j.contains("type")) m.type = j.at("type").get<std::string>();
      auto crn_h = [&](const char* k, models::CrnHyper& h) {
        if (!j.contains(k)) return;
        json full = h.to_json();
        full.update(j.at(k));
        h = models::CrnHyper::from_json(full);
      };
      auto rnn_h = [&](const char* k, models::RnnHyper& h) {
        if (!j.contains(k)) return;
        json full = h.to_json();
        full.update(j.at(k));
        h = models::RnnHyper::from_json(full);
      };
      auto tc = [&](const char* k, train::TrainConfig& c) {
        if (!j.contains(k)) return;
        json full = c.to_json();
        full.update(j.at(k));
        c = train::TrainConfig::from_json(full);
      };
      crn_h("encoder", m.encoder);
      crn_h("decoder", m.decoder);
      rnn_h("rnn", m.rnn);
      rnn_h("propensity", m.propensity);
      rnn_h("rmsn_decoder", m.rmsn_decoder);
      tc("encoder_train", m.encoder_train);
      tc("decoder_train", m.decoder_train);
      if (j.contains("taus")) m.taus = j.at("taus").get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("model spec: ") + e.what());
    }
    m.validate();
    return m;
  }

  /// Settings used for desk-scale runs (1000/200/200 patients).
  static ModelSpec desk() {
    ModelSpec m;
    m.encoder_train.epochs = 40;
    m.encoder_train.learning_rate = 0.01;
    m.encoder_train.batch_size = 64;
    m.encoder_train.outcome_scale = 30.0;
    m.decoder_train = m.encoder_train;
    m.decoder_train.epochs = 15;
    m.decoder_train.batch_size = 256;
    m.decoder_train.learning_rate = 0.01;
    m.decoder.dropout = 0.1;
    return m;
  }
};

// ---------------------------------------------------------------------------
// data

struct Splits {
  std::vector<Trajectory> train, validation, test;
};

inline Splits simulate_splits(const sim::SimConfig& c) {
  return {sim::simulate_dataset(c, sim::Split::Train), sim::simulate_dataset(c, sim::Split::Validation),
          sim::simulate_dataset(c, sim::Split::Test)};
}

/// Test-split branch sets per horizon.
inline std::map<int, std::vector<sim::BranchSet>> make_branches(const std::vector<Trajectory>& test,
                                                                const std::vector<int>& taus, const sim::SimConfig& c) {
  std::map<int, std::vector<sim::BranchSet>> out;
  for (int t : taus) out[t] = sim::generate_counterfactuals(test, t, c);
  return out;
}

inline std::string dataset_text(const std::vector<Trajectory>& d) {
  std::ostringstream os;
  sim::write_dataset_csv(os, d);
  return os.str();
}

inline std::string branches_text(const std::vector<sim::BranchSet>& b) {
  std::ostringstream os;
  sim::write_branches_csv(os, b);
  return os.str();
}

inline std::string branch_file_name(int tau) { return "branches_tau" + std::to_string(tau) + ".csv"; }

/// Writes the three splits, branch files and a manifest into `dir`.
inline json write_data_dir(const fs::path& dir, const sim::SimConfig& c, const Splits& s,
                           const std::map<int, std::vector<sim::BranchSet>>& branches) {
  json files = json::object();
  auto put = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    files[name] = content_hash(text);
  };
  put("train.csv", dataset_text(s.train));
  put("validation.csv", dataset_text(s.validation));
  put("test.csv", dataset_text(s.test));
  for (const auto& [tau, b] : branches) put(branch_file_name(tau), branches_text(b));
  const json cfg = sim::sim_config_to_json(c);
  json m = {{"version", kVersion},
            {"kind", "dataset"},
            {"sim_config", cfg},
            {"config_hash", content_hash(cfg.dump())},
            {"seed", c.seed},
            {"gamma_c", c.gamma_c},
            {"gamma_r", c.gamma_r},
            {"files", files}};
  write_json(dir / "manifest.json", m);
  return m;
}

struct DataDir {
  fs::path dir;
  json manifest;
  sim::SimConfig config;
  Splits splits;

  std::vector<sim::BranchSet> branches(int tau) const {
    const fs::path p = dir / branch_file_name(tau);
    if (!fs::exists(p)) throw ConfigError("no branch file for tau = " + std::to_string(tau) + " in " + dir.string());
    return sim::read_branches_file(p.string());
  }
  std::string hash() const { return content_hash(manifest.dump()); }
};

inline DataDir read_data_dir(const fs::path& dir) {
  DataDir d;
  d.dir = dir;
  d.manifest = read_json(dir / "manifest.json");
  const json& cfg = d.manifest.at("sim_config");
  d.config = sim::sim_config_from_json(cfg, sim::priors_from_json(cfg.at("priors")));
  d.splits.train = sim::read_dataset_file((dir / "train.csv").string());
  d.splits.validation = sim::read_dataset_file((dir / "validation.csv").string());
  d.splits.test = sim::read_dataset_file((dir / "test.csv").string());
  return d;
}

// ---------------------------------------------------------------------------
// training

struct TrainedModel {
  json checkpoint;  // {"version", "type", "spec", "model"}
  std::vector<train::EpochLog> log;
  std::vector<train::EpochLog> decoder_log;
};

inline std::vector<int> horizons_up_to(int tau) {
  std::vector<int> h;
  for (int k = 1; k <= tau; ++k) h.push_back(k);
  return h;
}

inline TrainedModel train_model(const ModelSpec& spec, const Splits& data) {
  spec.validate();
  TrainedModel out;
  json model;
  const int tau = spec.max_tau();
  if (spec.type == "crn" || spec.type == "crn_lambda0") {
    const bool adv = spec.type == "crn";
    auto enc = train::train_encoder(data.train, data.validation, spec.encoder, spec.encoder_train, adv);
    out.log = enc.loop.log;
    model["encoder"] = enc.model.to_json();
    if (tau > 1) {
      train::TrainConfig dc = spec.decoder_train;
      dc.tau_max = tau;
      const auto rt = train::extract_representations(enc.model, data.train);
      const auto rv = train::extract_representations(enc.model, data.validation);
      const auto wt = train::make_decoder_windows(data.train, rt, tau);
      const auto wv = train::make_decoder_windows(data.validation, rv, tau);
      auto dec = train::train_decoder(wt, wv, enc.model.hp.repr, enc.model.stats, spec.decoder, dc, adv);
      out.decoder_log = dec.loop.log;
      model["decoder"] = dec.model.to_json();
    }
  } else if (spec.type == "rnn") {
    auto r = train::train_rnn(data.train, data.validation, spec.rnn, spec.encoder_train);
    out.log = r.loop.log;
    model = r.model.to_json();
  } else if (spec.type == "linear" || spec.type == "msm") {
    std::vector<Trajectory> all = data.train;
    all.insert(all.end(), data.validation.begin(), data.validation.end());
    models::MsmConfig mc;
    mc.horizons = horizons_up_to(tau);
    mc.use_weights = spec.type == "msm";
    model = models::MsmModel::fit(train::pointers(all), mc).to_json();
  } else if (spec.type == "rmsn") {
    train::RmsnConfig rc;
    rc.propensity = spec.propensity;
    rc.encoder = spec.rnn;
    rc.decoder = spec.rmsn_decoder;
    rc.propensity_train = spec.encoder_train;
    rc.encoder_train = spec.encoder_train;
    rc.decoder_train = spec.decoder_train;
    rc.decoder_train.tau_max = tau;
    model = train::train_rmsn(data.train, data.validation, rc).to_json();
  }
  out.checkpoint = {{"version", kVersion}, {"type", spec.type}, {"spec", spec.to_json()}, {"model", model}};
  return out;
}

inline std::string display_name(const std::string& type) {
  if (type == "crn") return "CRN";
  if (type == "crn_lambda0") return "CRN_lambda0";
  if (type == "rnn") return "RNN";
  if (type == "linear") return "Linear";
  if (type == "msm") return "MSM";
  if (type == "rmsn") return "RMSN";
  return type;
}

inline std::unique_ptr<eval::Estimator> load_estimator(const json& ckpt) {
  try {
    const std::string type = ckpt.at("type").get<std::string>();
    check_model_type(type);
    const json& m = ckpt.at("model");
    if (type == "crn" || type == "crn_lambda0") {
      std::optional<models::CrnDecoder> dec;
      if (m.contains("decoder")) dec = models::CrnDecoder::from_json(m.at("decoder"));
      return std::make_unique<eval::CrnEstimator>(models::CrnEncoder::from_json(m.at("encoder")), std::move(dec),
                                                  display_name(type));
    }
    if (type == "rnn") return std::make_unique<eval::RnnEstimator>(models::SequenceRegressor::from_json(m));
    if (type == "rmsn") return std::make_unique<eval::RmsnEstimator>(train::RmsnModel::from_json(m));
    return std::make_unique<eval::LinearEstimator>(models::MsmModel::from_json(m));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

inline models::CrnEncoder load_encoder(const json& ckpt) {
  const std::string type = ckpt.at("type").get<std::string>();
  if (type != "crn" && type != "crn_lambda0") throw ConfigError("checkpoint holds no CRN encoder (type " + type + ")");
  return models::CrnEncoder::from_json(ckpt.at("model").at("encoder"));
}

// ---------------------------------------------------------------------------
// evaluation

struct CellKey {
  double gamma_c = 0.0;
  double gamma_r = 0.0;
  std::uint64_t seed = 0;
};

/// RMSE per horizon plus selection accuracy for tau >= 2. Horizons the model
/// cannot predict are skipped and listed in `skipped`.
inline eval::MetricsReport evaluate_model(const eval::Estimator& m, const std::vector<Trajectory>& test,
                                          const std::map<int, std::vector<sim::BranchSet>>& branches, const CellKey& k,
                                          std::vector<int>* skipped = nullptr) {
  eval::MetricsReport r;
  const std::string name = m.name();
  for (const auto& [tau, sets] : branches) {
    if (!m.supports(tau)) {
      if (skipped) skipped->push_back(tau);
      continue;
    }
    const eval::PredictionTable t = eval::predict_all(m, test, sets);
    std::size_t n = 0;
    for (const auto& p : t.predicted) n += p.size();
    r.add(k.gamma_c, k.gamma_r, name, k.seed, tau, "rmse", eval::table_rmse(t), n);
    if (tau >= 2) {
      const auto a = eval::selection_accuracy(t);
      r.add(k.gamma_c, k.gamma_r, name, k.seed, tau, "treatment_accuracy", a.treatment, a.anchors);
      r.add(k.gamma_c, k.gamma_r, name, k.seed, tau, "timing_accuracy", a.timing, a.anchors);
      r.add(k.gamma_c, k.gamma_r, name, k.seed, tau, "timing_accuracy_conditional", a.timing_conditional,
            a.treatment_correct);
    }
  }
  return r;
}

inline void add_balancing(eval::MetricsReport& r, const eval::BalancingResult& b, const std::string& model,
                          const CellKey& k) {
  r.add(k.gamma_c, k.gamma_r, model, k.seed, 0, "repr_accuracy", b.repr_accuracy, b.test_rows);
  r.add(k.gamma_c, k.gamma_r, model, k.seed, 0, "history_accuracy", b.history_accuracy, b.test_rows);
  r.add(k.gamma_c, k.gamma_r, model, k.seed, 0, "majority_rate", b.majority_rate, b.test_rows);
}

inline std::string report_csv(const eval::MetricsReport& r) {
  std::ostringstream os;
  r.write_csv(os);
  return os.str();
}

inline std::string train_log_csv(const std::vector<train::EpochLog>& log) {
  std::ostringstream os;
  train::write_train_log_csv(os, log);
  return os.str();
}

}  // namespace crn::experiment

#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crn/error.hpp"
#include "crn/sim/counterfactual.hpp"
#include "crn/sim/tumor.hpp"

namespace crn::sim {

/// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse number '" + s + "'");
  }
}

inline long long parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse integer '" + s + "'");
  }
}

inline const char* kDatasetHeader = "patient_id,t,volume,chemo_conc,treatment,outcome,subgroup";
inline const char* kBranchHeader = "patient_id,t,tau,plan_index,plan,true_outcome";

inline void write_dataset_csv(std::ostream& os, const std::vector<Trajectory>& data) {
  os << kDatasetHeader << '\n';
  for (const Trajectory& tr : data) {
    for (int t = 0; t < tr.length(); ++t) {
      const auto k = static_cast<std::size_t>(t);
      os << tr.patient_id << ',' << t << ',' << format_double(tr.volume[k]) << ','
         << format_double(tr.chemo_conc[k]) << ',' << tr.treatment[k] << ','
         << format_double(tr.volume[k + 1]) << ',' << tr.subgroup << '\n';
    }
  }
}

/// Rows must be grouped by patient with t = 0, 1, ... in order.
inline std::vector<Trajectory> read_dataset_csv(std::istream& is, const std::string& name = "dataset") {
  std::string line;
  if (!std::getline(is, line) || line != kDatasetHeader) {
    throw ConfigError(name + ": expected header '" + std::string(kDatasetHeader) + "'");
  }
  std::vector<Trajectory> data;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    const auto cells = split_csv_line(line);
    if (cells.size() != 7) throw ConfigError(where + ": expected 7 columns");
    const long long pid = parse_int(cells[0], where);
    const long long t = parse_int(cells[1], where);
    const double volume = parse_double(cells[2], where);
    const double conc = parse_double(cells[3], where);
    const long long a = parse_int(cells[4], where);
    const double outcome = parse_double(cells[5], where);
    const long long subgroup = parse_int(cells[6], where);
    if (a < 0 || a >= kNumTreatments) throw ConfigError(where + ": treatment must be 0..3");
    if (subgroup < 1 || subgroup > 3) throw ConfigError(where + ": subgroup must be 1..3");
    if (!(volume > 0.0) || !(outcome > 0.0)) throw ConfigError(where + ": volumes must be > 0");
    if (t == 0) {
      Trajectory tr;
      tr.patient_id = pid;
      tr.subgroup = static_cast<int>(subgroup);
      tr.volume.push_back(volume);
      data.push_back(std::move(tr));
    } else if (data.empty() || data.back().patient_id != pid || data.back().length() != t) {
      throw ConfigError(where + ": rows must be grouped by patient with consecutive t from 0");
    }
    Trajectory& tr = data.back();
    tr.chemo_conc.push_back(conc);
    tr.treatment.push_back(static_cast<int>(a));
    tr.volume.push_back(outcome);
  }
  return data;
}

inline void write_branches_csv(std::ostream& os, const std::vector<BranchSet>& sets) {
  os << kBranchHeader << '\n';
  for (const BranchSet& b : sets) {
    for (std::size_t i = 0; i < b.plans.size(); ++i) {
      os << b.patient_id << ',' << b.t << ',' << b.tau << ',' << i << ',' << plan_to_string(b.plans[i])
         << ',' << format_double(b.true_outcomes[i]) << '\n';
    }
  }
}

inline std::vector<BranchSet> read_branches_csv(std::istream& is, const std::string& name = "branches") {
  std::string line;
  if (!std::getline(is, line) || line != kBranchHeader) {
    throw ConfigError(name + ": expected header '" + std::string(kBranchHeader) + "'");
  }
  std::vector<BranchSet> sets;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    const auto cells = split_csv_line(line);
    if (cells.size() != 6) throw ConfigError(where + ": expected 6 columns");
    const long long pid = parse_int(cells[0], where);
    const long long t = parse_int(cells[1], where);
    const long long tau = parse_int(cells[2], where);
    const long long idx = parse_int(cells[3], where);
    std::vector<int> plan = plan_from_string(cells[4]);
    const double y = parse_double(cells[5], where);
    if (static_cast<long long>(plan.size()) != tau) throw ConfigError(where + ": plan length differs from tau");
    if (idx == 0) {
      BranchSet b;
      b.patient_id = pid;
      b.t = static_cast<int>(t);
      b.tau = static_cast<int>(tau);
      sets.push_back(std::move(b));
    } else if (sets.empty() || sets.back().patient_id != pid || sets.back().t != t ||
               sets.back().tau != tau || static_cast<long long>(sets.back().plans.size()) != idx) {
      throw ConfigError(where + ": rows of one anchor must be contiguous with plan_index from 0");
    }
    sets.back().plans.push_back(std::move(plan));
    sets.back().true_outcomes.push_back(y);
  }
  return sets;
}

template <typename Fn>
void write_file(const std::string& path, Fn&& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  fn(os);
  os.flush();
  if (!os) throw ConfigError("failed writing '" + path + "'");
}

inline std::vector<Trajectory> read_dataset_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open dataset '" + path + "'");
  return read_dataset_csv(is, path);
}

inline std::vector<BranchSet> read_branches_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open branch file '" + path + "'");
  return read_branches_csv(is, path);
}

inline std::map<std::int64_t, const Trajectory*> index_by_patient(const std::vector<Trajectory>& data) {
  std::map<std::int64_t, const Trajectory*> m;
  for (const Trajectory& tr : data) m[tr.patient_id] = &tr;
  return m;
}

}  // namespace crn::sim

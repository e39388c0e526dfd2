#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crn/error.hpp"
#include "crn/sim/io.hpp"

namespace crn::eval {

/// One metric value. `metric` is one of rmse, treatment_accuracy,
/// timing_accuracy, timing_accuracy_conditional, repr_accuracy,
/// history_accuracy, majority_rate, or error (a failed sweep cell); tau is
/// 0 where it does not apply.
struct MetricRow {
  double gamma_c = 0.0;
  double gamma_r = 0.0;
  std::string model;
  std::uint64_t seed = 0;
  int tau = 0;
  std::string metric;
  double value = 0.0;
  std::size_t n = 0;
};

inline const char* kMetricsHeader = "gamma_c,gamma_r,model,seed,tau,metric,value,n";

struct MetricsReport {
  std::vector<MetricRow> rows;

  void add(double gamma_c, double gamma_r, const std::string& model, std::uint64_t seed, int tau, const std::string& metric, double value,
           std::size_t n) {
    if (!std::isfinite(value)) throw NumericalError("metric " + metric + " of " + model + " is not finite");
    if (value < 0.0) throw NumericalError("metric " + metric + " of " + model + " is negative");
    if (metric.find("accuracy") != std::string::npos && value > 100.0) {
      throw NumericalError("metric " + metric + " of " + model + " exceeds 100%");
    }
    rows.push_back({gamma_c, gamma_r, model, seed, tau, metric, value, n});
  }

  /// Values matching every key.
  std::vector<double> values(double gamma_c, double gamma_r, const std::string& model, int tau,
                             const std::string& metric) const {
    std::vector<double> v;
    for (const MetricRow& r : rows)
      if (r.gamma_c == gamma_c && r.gamma_r == gamma_r && r.model == model && r.tau == tau && r.metric == metric) v.push_back(r.value);
    return v;
  }

  void write_csv(std::ostream& os) const {
    os << kMetricsHeader << '\n';
    for (const MetricRow& r : rows) {
      os << sim::format_double(r.gamma_c) << ',' << sim::format_double(r.gamma_r) << ',' << r.model << ',' << r.seed << ',' << r.tau << ',' << r.metric << ','
         << sim::format_double(r.value) << ',' << r.n << '\n';
    }
  }

  static MetricsReport read_csv(std::istream& is) {
    MetricsReport m;
    std::string line;
    if (!std::getline(is, line) || line != kMetricsHeader) throw ConfigError("metrics CSV: bad header");
    int ln = 1;
    while (std::getline(is, line)) {
      ++ln;
      if (line.empty()) continue;
      const auto f = sim::split_csv_line(line);
      const std::string where = "metrics CSV line " + std::to_string(ln);
      if (f.size() != 8) throw ConfigError(where + ": expected 8 fields");
      m.rows.push_back({sim::parse_double(f[0], where), sim::parse_double(f[1], where), f[2],
                        static_cast<std::uint64_t>(sim::parse_int(f[3], where)),
                        static_cast<int>(sim::parse_int(f[4], where)), f[5], sim::parse_double(f[6], where),
                        static_cast<std::size_t>(sim::parse_int(f[7], where))});
    }
    return m;
  }

  nlohmann::json to_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (const MetricRow& r : rows) {
      a.push_back({{"gamma_c", r.gamma_c}, {"gamma_r", r.gamma_r}, {"model", r.model}, {"seed", r.seed}, {"tau", r.tau},
                   {"metric", r.metric}, {"value", r.value}, {"n", r.n}});
    }
    return {{"rows", a}};
  }

  void append(const MetricsReport& o) { rows.insert(rows.end(), o.rows.begin(), o.rows.end()); }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace crn::eval

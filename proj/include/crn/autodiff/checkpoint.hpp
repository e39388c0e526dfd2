#pragma once

#include <fstream>
#include <string>

#include "json.hpp"

#include "crn/autodiff/parameter.hpp"

namespace crn::ad {

using json = nlohmann::json;

/// {name: {"shape": [...], "values": [...]}} for every parameter.
inline json parameters_to_json(const ParameterSet& params) {
  json out = json::object();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    out[p.name] = {{"shape", p.value.shape()}, {"values", p.value.data()}};
  }
  return out;
}

/// Loads values into an already-shaped parameter set. Every parameter must be
/// present with an identical shape.
inline void parameters_from_json(const json& doc, ParameterSet& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!doc.contains(p.name)) throw ConfigError("checkpoint: missing parameter '" + p.name + "'");
    const json& entry = doc.at(p.name);
    const Shape shape = entry.at("shape").get<Shape>();
    if (shape != p.value.shape()) {
      throw ShapeError("checkpoint: parameter '" + p.name + "' has shape " + shape_str(shape) +
                       " but the model expects " + shape_str(p.value.shape()));
    }
    auto values = entry.at("values").get<std::vector<double>>();
    p.value = Tensor(shape, std::move(values));
    p.grad = Tensor(shape);
  }
}

inline void write_json_file(const std::string& path, const json& doc) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  os << doc.dump(1) << '\n';
  if (!os) throw ConfigError("failed writing '" + path + "'");
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in '" + path + "': " + e.what());
  }
}

}  // namespace crn::ad

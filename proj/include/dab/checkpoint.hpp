#pragma once

// Checkpoints: one JSON document mapping parameter name to shape + data.
// Doubles serialize with round-trip precision, so save/load reproduces
// parameters exactly.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dab/optim.hpp"
#include "dab/tensor.hpp"

namespace dab {

inline void save_checkpoint(const ParamSet& params, const std::string& path) {
  nlohmann::ordered_json doc;
  for (const auto& name : params.names()) {
    const Tensor& t = params.value(name);
    doc[name] = {{"shape", t.shape()}, {"data", t.to_vector()}};
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint: " + path);
  out << doc.dump() << "\n";
}

// Loads into an already-declared ParamSet; names and shapes must agree in
// both directions.
inline void load_checkpoint(ParamSet& params, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed checkpoint " + path + ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError("checkpoint root must be an object: " + path);
  for (const auto& [name, entry] : doc.items()) {
    if (!params.contains(name)) {
      throw ParseError("checkpoint has unknown parameter: " + name);
    }
  }
  for (const auto& name : params.names()) {
    if (!doc.contains(name)) throw ParseError("checkpoint missing parameter: " + name);
    const auto& entry = doc.at(name);
    const Shape shape = entry.at("shape").get<Shape>();
    const std::vector<double> data = entry.at("data").get<std::vector<double>>();
    Tensor& t = params.value(name);
    if (shape != t.shape()) {
      throw ShapeError("checkpoint shape " + shape_str(shape) + " for parameter " + name +
                       " does not match declared shape " + shape_str(t.shape()));
    }
    if (data.size() != t.size()) {
      throw ParseError("checkpoint data length " + std::to_string(data.size()) +
                       " for parameter " + name + " does not match shape " + shape_str(shape));
    }
    for (std::size_t i = 0; i < data.size(); ++i) t[i] = data[i];
  }
}

}  // namespace dab

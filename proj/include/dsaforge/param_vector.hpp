#pragma once

// Flat parameter storage shared by every network in the pipeline. The layout
// is an ordered list of (in, out) layer shapes; layer l contributes
// out*in weights (row-major) followed by out biases.

#include <array>
#include <cstdint>
#include <numeric>

#include <json.hpp>

#include "dsaforge/common.hpp"

namespace dsaforge {

struct LayerDims {
  int in = 0;
  int out = 0;
  bool operator==(const LayerDims&) const = default;
};

inline std::size_t param_count(const LayerDims& l) {
  return static_cast<std::size_t>(l.out) * static_cast<std::size_t>(l.in) +
         static_cast<std::size_t>(l.out);
}

inline std::size_t param_count(std::span<const LayerDims> layout) {
  std::size_t n = 0;
  for (const auto& l : layout) n += param_count(l);
  return n;
}

struct ParamVector {
  std::vector<LayerDims> layout;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }

  bool same_layout(const ParamVector& other) const { return layout == other.layout; }

  void check() const {
    if (values.size() != param_count(layout))
      throw ConfigError("ParamVector: values length " + std::to_string(values.size()) +
                        " does not match layout size " + std::to_string(param_count(layout)));
  }

  static ParamVector zeros_like(const ParamVector& p) {
    return ParamVector{p.layout, std::vector<double>(p.values.size(), 0.0)};
  }
};

inline nlohmann::json to_json(const ParamVector& p) {
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& l : p.layout) layout.push_back({l.in, l.out});
  return nlohmann::json{{"layout", layout}, {"values", p.values}};
}

inline ParamVector param_vector_from_json(const nlohmann::json& j) {
  ParamVector p;
  for (const auto& e : j.at("layout"))
    p.layout.push_back(LayerDims{e.at(0).get<int>(), e.at(1).get<int>()});
  p.values = j.at("values").get<std::vector<double>>();
  p.check();
  return p;
}

}  // namespace dsaforge

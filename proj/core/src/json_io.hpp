#pragma once

// JSON helpers shared by the checkpoint writers. Not installed.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "invdse/errors.hpp"
#include "invdse/tensor_net.hpp"

namespace invdse::detail {

using json = nlohmann::json;

inline json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vector_from_json(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

inline json net_spec_to_json(const nn::NetSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"kind", l.kind == nn::LayerKind::dense ? "dense" : "residual_block"},
                      {"in", l.in_width},
                      {"out", l.out_width},
                      {"activation", nn::to_string(l.activation)}});
  }
  return {{"input_width", spec.input_width},
          {"embed_width", spec.embed_width},
          {"output_width", spec.output_width},
          {"layers", layers}};
}

inline nn::NetSpec net_spec_from_json(const json& j) {
  nn::NetSpec spec;
  spec.input_width = j.at("input_width").get<int>();
  spec.embed_width = j.at("embed_width").get<int>();
  spec.output_width = j.at("output_width").get<int>();
  for (const auto& jl : j.at("layers")) {
    nn::LayerSpec l;
    auto kind = jl.at("kind").get<std::string>();
    if (kind == "dense") {
      l.kind = nn::LayerKind::dense;
    } else if (kind == "residual_block") {
      l.kind = nn::LayerKind::residual_block;
    } else {
      throw ConfigError("unknown layer kind '" + kind + "'");
    }
    l.in_width = jl.at("in").get<int>();
    l.out_width = jl.at("out").get<int>();
    l.activation = nn::activation_from_string(jl.at("activation").get<std::string>());
    spec.layers.push_back(l);
  }
  spec.check();
  return spec;
}

inline json adam_to_json(const nn::AdamState& s) {
  return {{"learning_rate", s.config.learning_rate},
          {"beta1", s.config.beta1},
          {"beta2", s.config.beta2},
          {"epsilon", s.config.epsilon},
          {"step", s.step},
          {"m", vector_to_json(s.m)},
          {"v", vector_to_json(s.v)}};
}

inline nn::AdamState adam_from_json(const json& j) {
  nn::AdamState s;
  s.config.learning_rate = j.at("learning_rate").get<double>();
  s.config.beta1 = j.at("beta1").get<double>();
  s.config.beta2 = j.at("beta2").get<double>();
  s.config.epsilon = j.at("epsilon").get<double>();
  s.step = j.at("step").get<long>();
  s.m = vector_from_json(j.at("m"));
  s.v = vector_from_json(j.at("v"));
  return s;
}

inline nn::NetParams params_from_json(const nn::NetSpec& spec, const json& a) {
  nn::NetParams p(spec);
  auto v = vector_from_json(a);
  if (static_cast<std::size_t>(v.size()) != spec.param_count()) {
    throw ParseError("checkpoint parameter count does not match its spec", 0);
  }
  p.assign(std::move(v));
  return p;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'", 0);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(1) << '\n';
}

inline void require_format(const json& j, const char* format, int version) {
  if (!j.is_object() || j.value("format", "") != format) {
    throw ParseError(std::string("expected a '") + format + "' document", 0);
  }
  if (j.value("version", 0) != version) {
    throw ParseError(std::string("unsupported ") + format + " version " + std::to_string(j.value("version", 0)), 0);
  }
}

}  // namespace invdse::detail

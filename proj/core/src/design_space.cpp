#include "invdse/design_space.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "invdse/csv.hpp"

namespace invdse {

namespace {

using json = nlohmann::json;

struct CandidateLiteral {
  std::string operator()(std::int64_t v) const { return std::to_string(v); }
  std::string operator()(double v) const {
    std::string s = fmt::format("{}", v);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
  }
  std::string operator()(bool v) const { return v ? "true" : "false"; }
  std::string operator()(const std::string& v) const { return v; }
};

json candidate_to_json(const CandidateValue& v) {
  return std::visit([](const auto& x) { return json(x); }, v);
}

CandidateValue candidate_from_json(const json& j) {
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw ConfigError("unsupported candidate literal " + j.dump());
}

std::string rule_kind_name(RuleKind k) { return k == RuleKind::le_coupled ? "le" : "ge"; }

}  // namespace

std::string to_string(const CandidateValue& v) { return std::visit(CandidateLiteral{}, v); }

std::string to_string(Layer layer) {
  switch (layer) {
    case Layer::architecture: return "architecture";
    case Layer::logic_synthesis: return "logic_synthesis";
    case Layer::physical_design: return "physical_design";
  }
  return "?";
}

Layer layer_from_string(const std::string& s) {
  if (s == "architecture") return Layer::architecture;
  if (s == "logic_synthesis") return Layer::logic_synthesis;
  if (s == "physical_design") return Layer::physical_design;
  throw ConfigError("unknown layer '" + s + "'");
}

bool ParameterSpec::numeric() const {
  return std::all_of(candidates.begin(), candidates.end(), [](const CandidateValue& v) {
    return std::holds_alternative<std::int64_t>(v) || std::holds_alternative<double>(v);
  });
}

double ParameterSpec::numeric_value(std::size_t j) const {
  const auto& v = candidates.at(j);
  if (auto p = std::get_if<std::int64_t>(&v)) return static_cast<double>(*p);
  if (auto p = std::get_if<double>(&v)) return *p;
  throw ConfigError("parameter '" + name + "' is not numeric");
}

std::optional<std::size_t> ParameterSpec::find_literal(const std::string& literal) const {
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    if (to_string(candidates[j]) == literal) return j;
  }
  if (numeric()) {
    double x = 0.0;
    try {
      std::size_t used = 0;
      x = std::stod(literal, &used);
      if (used != literal.size()) return std::nullopt;
    } catch (const std::exception&) {
      return std::nullopt;
    }
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if (numeric_value(j) == x) return j;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

Configuration::Configuration(const DesignSpace& space, std::vector<std::uint8_t> choices)
    : choices_(std::move(choices)) {
  if (choices_.size() != space.num_params()) {
    throw ConfigError(fmt::format("configuration has {} choices, space has {} parameters", choices_.size(),
                                  space.num_params()));
  }
  for (std::size_t i = 0; i < choices_.size(); ++i) {
    if (choices_[i] >= space.param(i).candidates.size()) {
      throw ConfigError(fmt::format("choice {} out of range for parameter '{}'", int(choices_[i]),
                                    space.param(i).name));
    }
  }
}

Configuration Configuration::with(const DesignSpace& space, std::size_t i, std::size_t j) const {
  auto copy = choices_;
  copy.at(i) = static_cast<std::uint8_t>(j);
  return Configuration(space, std::move(copy));
}

std::size_t ConfigurationHash::operator()(const Configuration& c) const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto v : c.choices()) {
    h ^= v;
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(h);
}

SignedTensor Bitmap::to_signed() const {
  SignedTensor t(rows, cols, -1.0);
  for (std::size_t k = 0; k < bits.size(); ++k) {
    if (bits[k]) t.data[k] = 1.0;
  }
  return t;
}

// ---------------------------------------------------------------------------

DesignSpace::DesignSpace(std::vector<ParameterSpec> params, std::vector<DesignRule> rules)
    : params_(std::move(params)), rules_(std::move(rules)) {
  if (params_.empty()) throw ConfigError("design space has no parameters");
  std::set<std::string> names;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    if (p.id != static_cast<int>(i) + 1) {
      throw ConfigError(fmt::format("parameter '{}' has id {}, expected {}", p.name, p.id, i + 1));
    }
    if (!names.insert(p.name).second) throw ConfigError("duplicate parameter name '" + p.name + "'");
    if (p.candidates.empty() || p.candidates.size() > kMaxCandidates) {
      throw ConfigError(fmt::format("parameter '{}' must have 1..{} candidates", p.name, kMaxCandidates));
    }
    std::set<std::string> lits;
    for (const auto& c : p.candidates) {
      if (!lits.insert(to_string(c)).second) {
        throw ConfigError("parameter '" + p.name + "' has duplicate candidate " + to_string(c));
      }
    }
  }
  for (const auto& r : rules_) {
    const auto& lhs = params_.at(index_of_id(r.lhs));
    const auto& rhs = params_.at(index_of_id(r.rhs));
    if (!lhs.numeric() || !rhs.numeric()) {
      throw ConfigError("rule couples non-numeric parameters '" + lhs.name + "' and '" + rhs.name + "'");
    }
    // Every bound value must admit at least one lhs candidate, otherwise legalize could fail.
    for (std::size_t b = 0; b < rhs.candidates.size(); ++b) {
      double bound = rhs.numeric_value(b);
      bool ok = false;
      for (std::size_t j = 0; j < lhs.candidates.size(); ++j) {
        double v = lhs.numeric_value(j);
        ok = ok || (r.kind == RuleKind::le_coupled ? v <= bound : v >= bound);
      }
      if (!ok) {
        throw ConfigError(fmt::format("rule {} {} {} cannot be satisfied for bound {}", lhs.name,
                                      rule_kind_name(r.kind), rhs.name, bound));
      }
    }
  }
}

std::size_t DesignSpace::index_of_id(int id) const {
  if (id < 1 || static_cast<std::size_t>(id) > params_.size()) {
    throw ConfigError(fmt::format("no parameter with id {}", id));
  }
  return static_cast<std::size_t>(id - 1);
}

const DesignSpace& DesignSpace::accelerator() {
  static const DesignSpace space = [] {
    using L = Layer;
    auto ints = [](std::initializer_list<std::int64_t> v) {
      return std::vector<CandidateValue>(v.begin(), v.end());
    };
    auto reals = [](std::initializer_list<double> v) { return std::vector<CandidateValue>(v.begin(), v.end()); };
    auto tokens = [](std::initializer_list<const char*> v) {
      std::vector<CandidateValue> out;
      for (const char* s : v) out.emplace_back(std::string(s));
      return out;
    };
    auto flags = [] { return std::vector<CandidateValue>{true, false}; };
    std::vector<ParameterSpec> p = {
        {1, "tile_row", L::architecture, ints({1, 2, 4, 8, 16})},
        {2, "tile_column", L::architecture, ints({1, 2, 4, 8, 16})},
        {3, "mesh_row", L::architecture, ints({1, 2, 4, 8, 16})},
        {4, "mesh_column", L::architecture, ints({1, 2, 4, 8, 16})},
        {5, "target_clock_period_ns", L::logic_synthesis, reals({0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4})},
        {6, "syn_generic_effort", L::logic_synthesis, tokens({"none", "low", "medium", "high"})},
        {7, "syn_map_effort", L::logic_synthesis, tokens({"none", "low", "medium", "high", "express"})},
        {8, "syn_opt_effort", L::logic_synthesis,
         tokens({"none", "low", "medium", "high", "express", "extreme"})},
        {9, "auto_ungroup", L::logic_synthesis, flags()},
        {10, "place_utilization", L::physical_design, reals({0.3, 0.4, 0.5, 0.6, 0.7})},
        {11, "place_glo_max_density", L::physical_design, reals({0.3, 0.4, 0.5, 0.6, 0.7})},
        {12, "place_glo_uniform_density", L::physical_design, flags()},
        {13, "place_glo_cong_effort", L::physical_design, tokens({"auto", "low", "medium", "high"})},
        {14, "place_glo_timing_effort", L::physical_design, tokens({"medium", "high"})},
        {15, "place_glo_auto_block_in_chan", L::physical_design, tokens({"none", "soft", "partial"})},
        {16, "place_det_act_power_driven", L::physical_design, flags()},
    };
    std::vector<DesignRule> rules = {
        {RuleKind::le_coupled, 1, 3},
        {RuleKind::le_coupled, 2, 4},
        {RuleKind::ge_coupled, 11, 10},
    };
    return DesignSpace(std::move(p), std::move(rules));
  }();
  return space;
}

std::string DesignSpace::to_json() const {
  json doc;
  doc["format"] = "invdse-design-space";
  doc["version"] = 1;
  doc["parameters"] = json::array();
  for (const auto& p : params_) {
    json cands = json::array();
    for (const auto& c : p.candidates) cands.push_back(candidate_to_json(c));
    doc["parameters"].push_back({{"id", p.id}, {"name", p.name}, {"layer", to_string(p.layer)}, {"candidates", cands}});
  }
  doc["rules"] = json::array();
  for (const auto& r : rules_) {
    doc["rules"].push_back({{"kind", rule_kind_name(r.kind)},
                            {"lhs", params_[index_of_id(r.lhs)].name},
                            {"rhs", params_[index_of_id(r.rhs)].name}});
  }
  return doc.dump(2) + "\n";
}

DesignSpace DesignSpace::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("design space: ") + e.what());
  }
  try {
    if (doc.value("format", "") != "invdse-design-space") throw ConfigError("design space: wrong format tag");
    if (doc.value("version", 0) != 1) throw ConfigError("design space: unsupported version");
    std::vector<ParameterSpec> params;
    for (const auto& jp : doc.at("parameters")) {
      ParameterSpec p;
      p.id = jp.at("id").get<int>();
      p.name = jp.at("name").get<std::string>();
      p.layer = layer_from_string(jp.at("layer").get<std::string>());
      for (const auto& c : jp.at("candidates")) p.candidates.push_back(candidate_from_json(c));
      params.push_back(std::move(p));
    }
    auto id_of = [&](const std::string& name) {
      for (const auto& p : params) {
        if (p.name == name) return p.id;
      }
      throw ConfigError("rule references unknown parameter '" + name + "'");
    };
    std::vector<DesignRule> rules;
    for (const auto& jr : doc.value("rules", json::array())) {
      auto kind = jr.at("kind").get<std::string>();
      if (kind != "le" && kind != "ge") throw ConfigError("rule kind must be 'le' or 'ge'");
      rules.push_back({kind == "le" ? RuleKind::le_coupled : RuleKind::ge_coupled,
                       id_of(jr.at("lhs").get<std::string>()), id_of(jr.at("rhs").get<std::string>())});
    }
    return DesignSpace(std::move(params), std::move(rules));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("design space: ") + e.what());
  }
}

DesignSpace DesignSpace::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open design space file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void DesignSpace::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << to_json();
}

std::optional<std::size_t> DesignSpace::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t DesignSpace::require_index(const std::string& name) const {
  auto i = index_of(name);
  if (!i) throw ConfigError("design space has no parameter '" + name + "'");
  return *i;
}

std::uint64_t DesignSpace::unconstrained_size() const {
  std::uint64_t n = 1;
  for (const auto& p : params_) n *= p.candidates.size();
  return n;
}

std::vector<RuleViolation> DesignSpace::validate(const Configuration& c) const {
  std::vector<RuleViolation> out;
  for (std::size_t k = 0; k < rules_.size(); ++k) {
    const auto& r = rules_[k];
    std::size_t a = index_of_id(r.lhs), b = index_of_id(r.rhs);
    double va = params_[a].numeric_value(c[a]);
    double vb = params_[b].numeric_value(c[b]);
    bool ok = r.kind == RuleKind::le_coupled ? va <= vb : va >= vb;
    if (!ok) out.push_back({k, r});
  }
  return out;
}

Configuration DesignSpace::legalize(const Configuration& c) const {
  auto choices = c.choices();
  for (std::size_t pass = 0; pass <= rules_.size(); ++pass) {
    bool changed = false;
    for (const auto& r : rules_) {
      std::size_t a = index_of_id(r.lhs), b = index_of_id(r.rhs);
      const auto& pa = params_[a];
      double bound = params_[b].numeric_value(choices[b]);
      double va = pa.numeric_value(choices[a]);
      std::optional<std::size_t> pick;
      if (r.kind == RuleKind::le_coupled && va > bound) {
        for (std::size_t j = 0; j < pa.candidates.size(); ++j) {
          double v = pa.numeric_value(j);
          if (v <= bound && (!pick || v > pa.numeric_value(*pick))) pick = j;
        }
      } else if (r.kind == RuleKind::ge_coupled && va < bound) {
        for (std::size_t j = 0; j < pa.candidates.size(); ++j) {
          double v = pa.numeric_value(j);
          if (v >= bound && (!pick || v < pa.numeric_value(*pick))) pick = j;
        }
      } else {
        continue;
      }
      if (!pick) throw ConfigError("no candidate of '" + pa.name + "' satisfies its design rule");
      choices[a] = static_cast<std::uint8_t>(*pick);
      changed = true;
    }
    if (!changed) return Configuration(*this, std::move(choices));
  }
  throw ConfigError("legalization did not converge; design rules are cyclic");
}

Bitmap DesignSpace::encode(const Configuration& c) const {
  Bitmap b{num_params(), width(), std::vector<std::uint8_t>(num_params() * width(), 0)};
  for (std::size_t i = 0; i < num_params(); ++i) b.bits[i * width() + c[i]] = 1;
  return b;
}

Configuration DesignSpace::decode(const Tensor2D& values) const {
  if (values.rows != num_params() || values.cols != width()) {
    throw ShapeError(fmt::format("decode expects a {}x{} tensor, got {}x{}", num_params(), width(), values.rows,
                                 values.cols));
  }
  std::vector<std::uint8_t> choices(num_params());
  for (std::size_t i = 0; i < num_params(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < params_[i].candidates.size(); ++j) {
      if (values(i, j) > values(i, best)) best = j;
    }
    choices[i] = static_cast<std::uint8_t>(best);
  }
  return Configuration(*this, std::move(choices));
}

Configuration DesignSpace::first() const {
  return Configuration(*this, std::vector<std::uint8_t>(num_params(), 0));
}

Configuration DesignSpace::random_config(Rng& rng) const {
  std::vector<std::uint8_t> choices(num_params());
  for (std::size_t i = 0; i < num_params(); ++i) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(params_[i].candidates.size()) - 1);
    choices[i] = static_cast<std::uint8_t>(pick(rng));
  }
  return legalize(Configuration(*this, std::move(choices)));
}

Configuration DesignSpace::mutate(const Configuration& c, double rate, Rng& rng) const {
  auto choices = c.choices();
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t i = 0; i < num_params(); ++i) {
    if (coin(rng) < rate) {
      std::uniform_int_distribution<int> pick(0, static_cast<int>(params_[i].candidates.size()) - 1);
      choices[i] = static_cast<std::uint8_t>(pick(rng));
    }
  }
  return legalize(Configuration(*this, std::move(choices)));
}

std::vector<std::string> DesignSpace::literals(const Configuration& c) const {
  std::vector<std::string> out;
  out.reserve(num_params());
  for (std::size_t i = 0; i < num_params(); ++i) out.push_back(params_[i].literal(c[i]));
  return out;
}

Configuration DesignSpace::from_literals(const std::vector<std::string>& literals, std::size_t line) const {
  if (literals.size() != num_params()) {
    throw ParseError(fmt::format("expected {} parameter values, found {}", num_params(), literals.size()), line);
  }
  std::vector<std::uint8_t> choices(num_params());
  for (std::size_t i = 0; i < num_params(); ++i) {
    auto j = params_[i].find_literal(literals[i]);
    if (!j) throw ParseError("'" + literals[i] + "' is not a candidate of " + params_[i].name, line);
    choices[i] = static_cast<std::uint8_t>(*j);
  }
  return Configuration(*this, std::move(choices));
}

std::string DesignSpace::describe(const Configuration& c) const {
  std::string out;
  for (std::size_t i = 0; i < num_params(); ++i) {
    if (i) out += ' ';
    out += params_[i].name + "=" + params_[i].literal(c[i]);
  }
  return out;
}

void write_configs_csv(const std::filesystem::path& path, const DesignSpace& space,
                       const std::vector<Configuration>& configs) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  std::vector<std::string> header;
  for (const auto& p : space.params()) header.push_back(p.name);
  out << csv::join(header) << '\n';
  for (const auto& c : configs) out << csv::join(space.literals(c)) << '\n';
}

std::vector<Configuration> read_configs_csv(const std::filesystem::path& path, const DesignSpace& space) {
  auto table = csv::read(path);
  std::vector<std::size_t> cols;
  for (const auto& p : space.params()) cols.push_back(table.column(p.name));
  std::vector<Configuration> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    std::vector<std::string> lits;
    for (auto c : cols) lits.push_back(row.fields[c]);
    out.push_back(space.from_literals(lits, row.line));
  }
  return out;
}

}  // namespace invdse

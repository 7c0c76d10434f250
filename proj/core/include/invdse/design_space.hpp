#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "invdse/seeds.hpp"
#include "invdse/tensor.hpp"

namespace invdse {

/// Maximum number of candidates per parameter (bitmap width).
inline constexpr std::size_t kMaxCandidates = 7;

enum class Layer { architecture, logic_synthesis, physical_design };

/// A candidate literal. Enum tokens are stored as strings.
using CandidateValue = std::variant<std::int64_t, double, bool, std::string>;

std::string to_string(const CandidateValue& v);
std::string to_string(Layer layer);
Layer layer_from_string(const std::string& s);

struct ParameterSpec {
  int id = 0;  // 1-based
  std::string name;
  Layer layer = Layer::architecture;
  std::vector<CandidateValue> candidates;

  bool numeric() const;
  /// Numeric value of candidate `j`; throws ConfigError for boolean or enum parameters.
  double numeric_value(std::size_t j) const;
  std::string literal(std::size_t j) const { return to_string(candidates.at(j)); }
  /// Index of a candidate given its literal; numeric literals also match by value.
  std::optional<std::size_t> find_literal(const std::string& literal) const;
};

enum class RuleKind {
  le_coupled,  // value(lhs) <= value(rhs); lhs is clamped down when violated
  ge_coupled,  // value(lhs) >= value(rhs); lhs is raised when violated
};

struct DesignRule {
  RuleKind kind = RuleKind::le_coupled;
  int lhs = 0;  // parameter id of the constrained parameter
  int rhs = 0;  // parameter id of the bound

  friend bool operator==(const DesignRule&, const DesignRule&) = default;
};

struct RuleViolation {
  std::size_t rule_index = 0;
  DesignRule rule;

  friend bool operator==(const RuleViolation&, const RuleViolation&) = default;
};

class DesignSpace;

/// One candidate index per parameter.
class Configuration {
 public:
  Configuration() = default;
  /// Throws ConfigError if the arity or any index is out of range for `space`.
  Configuration(const DesignSpace& space, std::vector<std::uint8_t> choices);

  std::size_t size() const { return choices_.size(); }
  std::uint8_t operator[](std::size_t i) const { return choices_[i]; }
  const std::vector<std::uint8_t>& choices() const { return choices_; }

  /// Returns a copy with parameter `i` set to candidate `j`; checked against `space`.
  Configuration with(const DesignSpace& space, std::size_t i, std::size_t j) const;

  friend auto operator<=>(const Configuration&, const Configuration&) = default;
  friend bool operator==(const Configuration&, const Configuration&) = default;

 private:
  std::vector<std::uint8_t> choices_;
};

struct ConfigurationHash {
  std::size_t operator()(const Configuration& c) const noexcept;
};

/// N x K one-hot matrix.
struct Bitmap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t operator()(std::size_t i, std::size_t j) const { return bits[i * cols + j]; }
  SignedTensor to_signed() const;
  friend bool operator==(const Bitmap&, const Bitmap&) = default;
};

class DesignSpace {
 public:
  DesignSpace(std::vector<ParameterSpec> params, std::vector<DesignRule> rules);

  /// The 16-parameter cross-layer accelerator space with its two coupling rules.
  static const DesignSpace& accelerator();

  /// Loads a JSON design-space file (see data/design_space.json).
  static DesignSpace load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_json() const;
  static DesignSpace from_json(const std::string& text);

  std::size_t num_params() const { return params_.size(); }
  std::size_t width() const { return kMaxCandidates; }
  const std::vector<ParameterSpec>& params() const { return params_; }
  const ParameterSpec& param(std::size_t i) const { return params_.at(i); }
  const std::vector<DesignRule>& rules() const { return rules_; }

  /// Position of a parameter by name; nullopt when absent.
  std::optional<std::size_t> index_of(const std::string& name) const;
  std::size_t require_index(const std::string& name) const;

  /// Number of configurations before constraints (product of candidate counts).
  std::uint64_t unconstrained_size() const;

  std::vector<RuleViolation> validate(const Configuration& c) const;
  bool is_valid(const Configuration& c) const { return validate(c).empty(); }
  Configuration legalize(const Configuration& c) const;

  Bitmap encode(const Configuration& c) const;
  /// Row-wise argmax over each parameter's live columns; ties go to the lowest index.
  Configuration decode(const Tensor2D& values) const;
  SignedTensor to_signed(const Configuration& c) const { return encode(c).to_signed(); }

  Configuration first() const;
  Configuration random_config(Rng& rng) const;
  /// Independently resamples each parameter with probability `rate`, then legalizes.
  Configuration mutate(const Configuration& c, double rate, Rng& rng) const;

  std::vector<std::string> literals(const Configuration& c) const;
  Configuration from_literals(const std::vector<std::string>& literals, std::size_t line = 0) const;
  std::string describe(const Configuration& c) const;

 private:
  std::size_t index_of_id(int id) const;

  std::vector<ParameterSpec> params_;
  std::vector<DesignRule> rules_;
};

/// Headered CSV of configurations, values written as candidate literals.
void write_configs_csv(const std::filesystem::path& path, const DesignSpace& space,
                       const std::vector<Configuration>& configs);
std::vector<Configuration> read_configs_csv(const std::filesystem::path& path, const DesignSpace& space);

}  // namespace invdse

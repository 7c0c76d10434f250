#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "invdse/design_space.hpp"
#include "invdse/seeds.hpp"

namespace invdse {

inline constexpr std::size_t kObjectives = 3;

/// Raw quality of results: performance in MAC/ps (higher is better), power in W and
/// area in um^2 (lower is better).
struct QoRVector {
  double performance = 0.0;
  double power = 0.0;
  double area = 0.0;

  bool valid() const;
  friend bool operator==(const QoRVector&, const QoRVector&) = default;
};

/// A point in minimization space; smaller is better in every coordinate.
using Objective = std::array<double, kObjectives>;

/// (-performance, power, area).
Objective to_minimization(const QoRVector& q);

/// Frozen per-coordinate min/max of minimization-space values.
struct ObjectiveBounds {
  Objective lo{};
  Objective hi{};

  /// Bounds of a labeled set; throws ConfigError when any coordinate is degenerate.
  static ObjectiveBounds from(std::span<const QoRVector> qors);
  void check() const;
};

/// Affine min-max map of to_minimization(q) into [0, 1] per coordinate.
Objective normalize(const QoRVector& q, const ObjectiveBounds& bounds);

/// a <= b everywhere and a < b somewhere.
bool dominates(const Objective& a, const Objective& b);
/// a <= b everywhere.
bool weakly_dominates(const Objective& a, const Objective& b);

/// Indices of points dominated by no other point, ascending. Duplicates are all kept.
std::vector<std::size_t> pareto_front(std::span<const Objective> points);

/// Exact measure of the union of boxes [p, ref]. Throws Error if some p exceeds ref.
double hypervolume(std::span<const Objective> points, const Objective& ref);

/// HV(front + y) - HV(front), with y clamped to y <= ref first.
double hvi_point(const Objective& y, std::span<const Objective> front, const Objective& ref);

struct EhviEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo expected HVI for independent Gaussian coordinates.
EhviEstimate ehvi_mc(const Objective& mean, const Objective& stddev, std::span<const Objective> front,
                     const Objective& ref, std::size_t samples, Rng& rng);

struct ArchiveRecord {
  Configuration config;
  QoRVector qor;
  Objective normalized{};
  int iteration = -1;  // -1 for the offline labeled set
};

class ParetoArchive {
 public:
  ParetoArchive(ObjectiveBounds bounds, Objective reference);

  /// Bounds from the labeled set, reference = max normalized value + margin.
  static ParetoArchive seeded(std::span<const Configuration> configs, std::span<const QoRVector> qors,
                              double reference_margin = 0.1);

  void add(const Configuration& config, const QoRVector& qor, int iteration);
  bool contains(const Configuration& config) const { return index_.count(config) != 0; }

  const std::vector<ArchiveRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<std::size_t>& front() const { return front_; }
  bool on_front(std::size_t i) const;
  std::vector<Objective> front_points() const;
  std::vector<Objective> all_points() const;

  /// HV of the front points that lie inside the reference box.
  double hypervolume() const;

  const Objective& reference() const { return reference_; }
  const ObjectiveBounds& bounds() const { return bounds_; }

 private:
  ObjectiveBounds bounds_;
  Objective reference_;
  std::vector<ArchiveRecord> records_;
  std::vector<std::size_t> front_;
  std::unordered_set<Configuration, ConfigurationHash> index_;
  mutable std::optional<double> hv_cache_;
};

struct ConditionSelectorConfig {
  double step_size = 0.1;
  int candidates_per_point = 64;
};

struct TargetSelection {
  Objective target{};
  double hvi = 0.0;
  std::size_t anchor = 0;   // archive index of the front point the target was drawn around
  bool degenerate = false;  // every candidate had zero improvement
};

/// Scores l-infinity perturbations and axis steps of every front point by HVI and keeps the best.
/// Candidates are clamped to the box between the ideal corner min(0, front) and r.
TargetSelection select_target(const ParetoArchive& archive, const ConditionSelectorConfig& cfg, Rng& rng);

}  // namespace invdse

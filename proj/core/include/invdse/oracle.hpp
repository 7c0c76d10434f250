#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "invdse/design_space.hpp"
#include "invdse/pareto.hpp"

namespace invdse {

/// A pure QoR model: same configuration, same answer.
class QoRSource {
 public:
  virtual ~QoRSource() = default;
  virtual QoRVector evaluate(const Configuration& config) const = 0;
  virtual std::string name() const = 0;
};

/// Budgeted evaluation boundary. Reservation and increment are one atomic step, and
/// failed evaluations are rolled back so calls() counts successful evaluations.
class QoREvaluator {
 public:
  QoREvaluator(std::shared_ptr<const QoRSource> source, std::size_t budget);

  /// Throws BudgetExhausted once `budget` evaluations have succeeded.
  QoRVector evaluate(const Configuration& config);

  std::size_t calls() const { return calls_.load(); }
  std::size_t budget() const { return budget_; }
  std::size_t remaining() const { return budget_ - calls(); }
  const QoRSource& source() const { return *source_; }

 private:
  std::shared_ptr<const QoRSource> source_;
  std::size_t budget_;
  std::atomic<std::size_t> calls_{0};
};

struct SyntheticOracleParams {
  std::uint64_t seed = 0;
  double noise = 0.02;          // relative amplitude of the hashed perturbation
  double power_coeff = 2.0e-4;  // W per MAC per GHz
  double area_coeff = 650.0;    // um^2 per MAC at full utilization
  double base_delay_ps = 160.0;
  double tile_delay_ps = 28.0;  // per doubling of PEs in a tile
  double mesh_delay_ps = 9.0;   // per doubling of tiles in the mesh
  double max_speedup = 0.6;     // fastest achievable timing as a fraction of the natural delay
};

/// Analytic PPA response surfaces over the accelerator space.
///
/// MACs = (tile_row * mesh_row) * (tile_column * mesh_column). The natural critical
/// path grows with tile and mesh size and is scaled by synthesis and placement
/// knobs; the achieved timing is the clock target clamped to
/// [max_speedup * natural, natural]. Meeting a target below the natural delay costs
/// gate upsizing, which raises power and area. Every knob trades one objective
/// against another. A deterministic hash of (configuration, seed) perturbs each
/// objective by at most `noise` relative.
class SyntheticOracle : public QoRSource {
 public:
  explicit SyntheticOracle(const DesignSpace& space, SyntheticOracleParams params = {});

  QoRVector evaluate(const Configuration& config) const override;
  std::string name() const override { return "synthetic"; }

  /// Noise-free breakdown used by tests.
  struct Breakdown {
    double macs = 0.0;
    double natural_ps = 0.0;
    double timing_ps = 0.0;
    double upsize = 1.0;
    QoRVector qor;
  };
  Breakdown breakdown(const Configuration& config) const;
  const SyntheticOracleParams& params() const { return params_; }

 private:
  const DesignSpace* space_;
  SyntheticOracleParams params_;
  struct Index {
    std::size_t tile_row, tile_col, mesh_row, mesh_col, clock, generic, map, opt, ungroup, utilization, density,
        uniform, congestion, timing_effort, auto_block, power_driven;
  } idx_;
};

/// Replays labels loaded from a CSV file; unknown configurations are errors.
class TableOracle : public QoRSource {
 public:
  /// Throws ParseError naming line numbers on malformed rows and on duplicate configurations.
  static TableOracle load(const std::filesystem::path& path, const DesignSpace& space);

  QoRVector evaluate(const Configuration& config) const override;
  std::string name() const override { return "table"; }
  std::size_t size() const { return table_.size(); }
  const std::map<Configuration, QoRVector>& entries() const { return table_; }

 private:
  const DesignSpace* space_ = nullptr;
  std::map<Configuration, QoRVector> table_;
};

/// Dim^2 / timing for a square array.
double perf_metric(long dim, double timing_ps);

/// Perf^2 / (power * area).
double ppa_tradeoff(double perf, double power_w, double area_um2);

struct LabeledConfig {
  Configuration config;
  QoRVector qor;
};

/// Label CSV: parameter columns (literals) then performance, power, area.
void write_labels_csv(const std::filesystem::path& path, const DesignSpace& space,
                      const std::vector<LabeledConfig>& labels);
std::vector<LabeledConfig> read_labels_csv(const std::filesystem::path& path, const DesignSpace& space);

}  // namespace invdse

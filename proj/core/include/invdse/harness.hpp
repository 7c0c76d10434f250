#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "invdse/design_space.hpp"
#include "invdse/diffusion.hpp"
#include "invdse/guidance.hpp"
#include "invdse/mobo.hpp"
#include "invdse/oracle.hpp"
#include "invdse/pareto.hpp"

namespace invdse {

/// Every knob of one experiment. Serialized as nested JSON objects whose keys are the
/// field names below; unknown keys are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  std::string design_space;  // empty: built-in accelerator space

  struct Oracle {
    std::string kind = "synthetic";  // synthetic | table
    std::uint64_t seed = 7;
    double noise = 0.02;
    std::string table;  // label CSV for kind = table
  } oracle;

  struct Data {
    std::size_t unlabeled = 10000;
    std::size_t labeled = 1000;
    std::size_t augment_multiplier = 2;
    double mutation_rate = 0.2;
  } data;

  struct Diffusion {
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    int sampler_steps = 50;
    bool clamp_x0 = true;
    int hidden = 256;
    int blocks = 3;
    int embed_dim = 32;
    std::string activation = "relu";
    long train_steps = 2000;
    int batch_size = 128;
    double learning_rate = 1e-3;
  } diffusion;

  struct Predictor {
    int hidden = 256;
    int blocks = 3;
    std::string activation = "relu";
    int epochs = 200;
    int batch_size = 128;
    double learning_rate = 1e-3;
    double holdout_fraction = 0.1;
    int retrain_epochs = 50;
  } predictor;

  struct Guidance {
    double strength = 1000.0;
    std::vector<double> weights{1.0, 1.0, 1.0};
    bool frozen_eps = false;
  } guidance;

  struct Online {
    std::size_t budget = 256;
    std::size_t batch_size = 1;
    double step_size = 0.1;
    int candidates_per_point = 64;
    int max_resamples = 8;
    double reference_margin = 0.1;
  } online;

  struct Mobo {
    std::size_t pool_size = 1024;
    std::size_t ehvi_samples = 128;
    int refit_every = 16;
    bool hyper_opt = true;
    bool center_targets = true;
  } mobo;

  /// Throws ConfigError on unknown keys, wrong types or out-of-range values.
  static ExperimentConfig parse(std::string_view json_text);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string to_json() const;

  /// Overrides one field by dotted path, e.g. set("online.budget", "64"). Values are
  /// read as JSON, falling back to a plain string. Unknown keys and wrong types throw
  /// ConfigError; range checks wait for validate() so related fields can change together.
  void set(std::string_view dotted_key, std::string_view value);

  void validate() const;
};

/// Named random streams, all derived from the global seed.
struct SeedSet {
  std::uint64_t prepare = 0;
  std::uint64_t denoiser = 0;
  std::uint64_t predictor = 0;
  std::uint64_t online = 0;
  std::uint64_t retrain = 0;
  std::uint64_t mobo = 0;

  static SeedSet derive(std::uint64_t global);
  std::map<std::string, std::uint64_t> named() const;
};

struct PreparedData {
  std::vector<Configuration> unlabeled;
  std::vector<LabeledConfig> labeled;
  std::vector<Configuration> augmented;
};

struct OfflineResult {
  DenoiserModel denoiser;
  QoRPredictor predictor;
  ParetoArchive archive;
  double offline_hypervolume = 0.0;
  TrainHistory history;  // empty when loaded from disk
};

/// One online evaluation. Both methods share this schema.
struct RunRecord {
  int iteration = 0;
  Objective target{};     // y* for the inverse run, GP posterior mean for MOBO
  double target_score = 0.0;  // HVI of y* or EHVI of the pick
  Configuration config;
  bool pre_legal_valid = true;
  bool legalized = false;
  int resamples = 0;
  bool mutate_fallback = false;
  QoRVector qor;
  Objective normalized{};
  double hypervolume = 0.0;
  double hvi = 0.0;  // against the offline archive
  int guidance_fallbacks = 0;
};

struct RunStats {
  std::size_t generated = 0;         // decoded samples, including resamples
  std::size_t pre_legal_invalid = 0;  // of those, rule violations before legalization
  std::size_t resamples = 0;
  std::size_t mutate_fallbacks = 0;
  std::size_t guidance_fallbacks = 0;
  std::size_t evaluations = 0;
  bool budget_exhausted = false;  // stopped by the oracle before reaching the planned count

  double error_rate() const {
    return generated ? static_cast<double>(pre_legal_invalid) / static_cast<double>(generated) : 0.0;
  }
};

struct RunResult {
  std::string method;
  std::vector<RunRecord> records;
  std::vector<double> wall_seconds;  // per record, kept out of the record CSV
  RunStats stats;
  ParetoArchive archive;
};

struct BestDesign {
  Configuration config;
  QoRVector qor;
  double tradeoff = 0.0;
  int iteration = -1;
};

/// Archive records ranked by ppa_tradeoff, best first; ties keep archive order.
std::vector<BestDesign> rank_by_tradeoff(const ParetoArchive& archive, std::size_t top);

struct MethodSummary {
  std::string method;
  double final_hypervolume = 0.0;
  double final_hvi = 0.0;
  std::size_t evaluations = 0;
  double error_rate = 0.0;
  std::vector<BestDesign> best;
};

struct ReportSummary {
  double offline_hypervolume = 0.0;
  std::vector<MethodSummary> methods;
};

/// Orchestrates one experiment inside its output directory.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  const SeedSet& seeds() const { return seeds_; }
  const DesignSpace& space() const { return *space_; }
  std::shared_ptr<const QoRSource> oracle() const { return oracle_; }
  std::filesystem::path path(const std::string& name) const;

  /// U random valid configurations, L of them labeled (budget-exempt), and the mutated pool.
  PreparedData prepare();
  PreparedData load_data() const;

  OfflineResult offline(const PreparedData& data);
  OfflineResult load_offline(const PreparedData& data) const;

  RunResult online(const OfflineResult& offline);
  RunResult mobo(const OfflineResult& offline);

  /// Reads whatever method outputs exist and writes the comparison files.
  ReportSummary report() const;

  /// prepare, offline, online, mobo, report.
  ReportSummary run_all();

  void write_manifest() const;

 private:
  ExperimentConfig cfg_;
  SeedSet seeds_;
  std::unique_ptr<DesignSpace> space_;
  std::shared_ptr<const QoRSource> oracle_;
};

/// Reads the config embedded in a manifest written by Experiment::write_manifest.
ExperimentConfig config_from_manifest(const std::filesystem::path& path);

void write_run_records(const std::filesystem::path& path, const DesignSpace& space,
                       const std::vector<RunRecord>& records);
std::vector<RunRecord> read_run_records(const std::filesystem::path& path, const DesignSpace& space);

void write_archive_csv(const std::filesystem::path& path, const DesignSpace& space, const ParetoArchive& archive);

struct PlotSeries {
  std::string method;
  std::vector<ArchiveRecord> points;
  std::vector<bool> on_front;
};

/// Three raw-QoR scatter plots (SVG) and their point CSVs.
void write_pareto_plots(const std::filesystem::path& dir, const std::vector<PlotSeries>& series);

}  // namespace invdse

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "invdse/design_space.hpp"
#include "invdse/oracle.hpp"
#include "invdse/pareto.hpp"

namespace invdse {

struct GPHyper {
  double signal = 1.0;  // sigma; the kernel amplitude is sigma^2
  double length = 4.0;
  double noise = 1e-6;  // variance added to the diagonal
};

struct GPFitOptions {
  bool hyper_opt = true;
  std::vector<double> length_grid{1.0, 2.0, 4.0, 8.0, 16.0};
  std::vector<double> signal_grid{0.25, 0.5, 1.0};
  double noise_floor = 1e-6;
  double noise_ceiling = 1e-2;
  bool center_targets = false;  // use the target mean as the constant prior mean
  GPHyper fixed;                // used when hyper_opt is false (noise raised to the floor)
};

struct GPPosterior {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Exact GP regression with a squared-exponential kernel. Inputs are columns.
class GPModel {
 public:
  const Eigen::MatrixXd& inputs() const { return x_; }
  const Eigen::VectorXd& targets() const { return y_; }
  const GPHyper& hyper() const { return hyper_; }
  double prior_mean() const { return prior_mean_; }
  double log_marginal_likelihood() const { return lml_; }
  std::size_t size() const { return static_cast<std::size_t>(x_.cols()); }

  double kernel(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) const;
  GPPosterior posterior(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  friend GPModel gp_fit(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, const GPFitOptions& opts);

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  GPHyper hyper_;
  double prior_mean_ = 0.0;
  double lml_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;  // (K + noise I)^-1 (y - prior mean)
};

/// Fits at the noise floor, raising it tenfold on factorization failure up to the ceiling.
/// Throws ConfigError for fewer than two points and Error when factorization never succeeds.
GPModel gp_fit(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, const GPFitOptions& opts = {});

/// Squared-exponential kernel sigma^2 exp(-|a - b|^2 / (2 l^2)).
double se_kernel(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b,
                 double signal, double length);

struct MoboConfig {
  std::size_t pool_size = 1024;
  std::size_t ehvi_samples = 128;
  int refit_every = 16;  // new points between hyperparameter searches
  bool hyper_opt = true;
  bool center_targets = true;

  void check() const;
};

using GPTriple = std::array<GPModel, kObjectives>;

struct CandidateScore {
  Configuration config;
  EhviEstimate ehvi;
  Objective mean{};
  Objective stddev{};
};

/// Posterior and Monte-Carlo EHVI of every candidate. Candidate i draws from derive_seed(seed, i).
std::vector<CandidateScore> score_pool(const GPTriple& gps, const DesignSpace& space, std::span<const Configuration> pool,
                                       const ParetoArchive& archive, std::size_t ehvi_samples, std::uint64_t seed);

/// Index of the highest EHVI; ties keep the earliest candidate.
std::size_t best_candidate(const std::vector<CandidateScore>& scores);

struct MoboStepRecord {
  int iteration = 0;
  Configuration config;
  double ehvi = 0.0;
  Objective mean{};
  Objective stddev{};
  QoRVector qor;
  double hypervolume = 0.0;
};

/// GP surrogates over an archive plus the acquisition loop around them.
class MoboState {
 public:
  MoboState(const DesignSpace& space, ParetoArchive archive, MoboConfig cfg);

  const ParetoArchive& archive() const { return archive_; }
  const GPTriple& models() const { return gps_; }
  const MoboConfig& config() const { return cfg_; }
  int iterations() const { return iteration_; }

  /// Refits all three GPs on the archive, searching hyperparameters when `search` is set.
  void refit(bool search);

  /// Fresh random valid configurations that are not archived, without repeats.
  std::vector<Configuration> draw_pool(std::size_t size, Rng& rng) const;

  /// One acquisition: pool, EHVI, evaluate the best, archive, refit.
  MoboStepRecord step(QoREvaluator& oracle, Rng& rng);
  /// Same with a caller-supplied pool (must be non-empty and disjoint from the archive).
  MoboStepRecord step_with_pool(QoREvaluator& oracle, std::span<const Configuration> pool, Rng& rng);

 private:
  const DesignSpace* space_;
  ParetoArchive archive_;
  MoboConfig cfg_;
  GPTriple gps_;
  std::array<GPHyper, kObjectives> hyper_{};
  int since_search_ = 0;
  int iteration_ = 0;
};

Eigen::MatrixXd encode_inputs(const DesignSpace& space, std::span<const Configuration> configs);

void write_mobo_trace(const std::filesystem::path& path, const DesignSpace& space,
                      const std::vector<MoboStepRecord>& steps);

}  // namespace invdse

#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "invdse/seeds.hpp"
#include "invdse/tensor.hpp"
#include "invdse/tensor_net.hpp"

namespace invdse {

/// Cumulative signal coefficients alpha_t, t = 1..T, from a linear per-step variance ramp.
struct NoiseSchedule {
  int timesteps = 0;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  std::vector<double> alpha;  // alpha[t - 1]

  /// Throws ConfigError if T < 1.
  static NoiseSchedule make(int T, double beta_start = 1e-4, double beta_end = 2e-2);

  /// alpha_t for t in 1..T; alpha_0 is defined as 1.
  double alpha_at(int t) const;
  /// Guidance scale c * sqrt(1 - alpha_t).
  double guidance_scale(int t, double c) const;
};

/// x_t = sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps.
Tensor2D forward_noise(const Tensor2D& x0, int t, const Tensor2D& eps, const NoiseSchedule& schedule);

/// (x_t - sqrt(1 - alpha) eps) / sqrt(alpha), columnwise for a batch.
Eigen::MatrixXd x0_from_noise(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& eps, double alpha);

struct DenoiserHyper {
  int hidden = 256;
  int blocks = 3;
  int embed_dim = 32;
  nn::Activation activation = nn::Activation::relu;
};

/// Noise predictor eps_theta(x_t, t) over flattened rows x cols tensors.
struct DenoiserModel {
  std::size_t rows = 0;
  std::size_t cols = 0;
  nn::NetSpec spec;
  nn::NetParams params;
  NoiseSchedule schedule;

  static DenoiserModel create(std::size_t rows, std::size_t cols, NoiseSchedule schedule, const DenoiserHyper& h,
                              Rng& rng);

  int flat_width() const { return static_cast<int>(rows * cols); }
  int embed_dim() const { return spec.embed_width; }

  /// Embedding matrix with `batch` copies of the embedding of t.
  Eigen::MatrixXd embed(int t, Eigen::Index batch) const;

  Eigen::MatrixXd predict_noise(const Eigen::MatrixXd& x_t, int t) const;
  nn::ForwardResult predict_noise_taped(const Eigen::MatrixXd& x_t, int t) const;

  void save(const std::filesystem::path& path, std::uint64_t seed) const;
  static DenoiserModel load(const std::filesystem::path& path);
};

struct DenoiserTrainConfig {
  long steps = 2000;
  int batch_size = 128;
  nn::AdamConfig adam;
};

struct TrainHistory {
  std::vector<double> loss;  // one entry per optimizer step
};

/// Noise-prediction regression: per step a minibatch, uniform t and Gaussian eps.
/// Throws on an empty dataset and DivergenceError (with the step) on a non-finite loss.
TrainHistory train_denoiser(DenoiserModel& model, const std::vector<SignedTensor>& data,
                            const DenoiserTrainConfig& cfg, Rng& rng);

void write_loss_csv(const std::filesystem::path& path, const TrainHistory& history);

/// x0 estimate from the model's noise prediction. Throws if alpha_t < 1e-8.
Tensor2D predict_x0(const DenoiserModel& model, const Tensor2D& x_t, int t);

/// Replaces the model's noise prediction with a refined one during sampling.
class GuidanceHook {
 public:
  virtual ~GuidanceHook() = default;
  /// x_t and eps hold one sample per column; `step` counts sampler iterations from 0.
  virtual Eigen::MatrixXd refine(const Eigen::MatrixXd& x_t, int t, const Eigen::MatrixXd& eps, int step) = 0;
};

struct SamplerConfig {
  int steps = 50;
  std::vector<int> timesteps;  // strictly increasing, last element is T
  bool clamp_x0 = true;  // clamp x0 to [-1, 1] and re-derive the noise from the clamped estimate

  /// Uniform stride tau_k = k T / S, k = 1..S.
  static SamplerConfig uniform(const NoiseSchedule& schedule, int steps, bool clamp_x0 = true);
  void check(const NoiseSchedule& schedule) const;
};

struct SampleStats {
  std::size_t model_evaluations = 0;
  std::size_t guidance_evaluations = 0;
};

struct SampleResult {
  Eigen::MatrixXd x0;  // one flattened sample per column, final x0 estimate
  SampleStats stats;
};

/// Deterministic (eta = 0) DDIM reverse pass for `batch` samples from standard Gaussian starts.
SampleResult ddim_sample(const DenoiserModel& model, const SamplerConfig& sampler, Rng& rng,
                         GuidanceHook* guidance = nullptr, Eigen::Index batch = 1);

/// Same, from a caller-supplied start x_{tau_S}.
SampleResult ddim_sample_from(const DenoiserModel& model, const SamplerConfig& sampler, Eigen::MatrixXd x,
                              GuidanceHook* guidance = nullptr);

/// Converts column `k` of a sample batch back to an N x K tensor.
Tensor2D column_tensor(const DenoiserModel& model, const Eigen::MatrixXd& batch, Eigen::Index k);

/// Stacks tensors as columns of a batch matrix.
Eigen::MatrixXd stack_columns(const std::vector<SignedTensor>& tensors);

}  // namespace invdse

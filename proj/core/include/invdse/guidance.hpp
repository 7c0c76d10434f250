#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "invdse/design_space.hpp"
#include "invdse/diffusion.hpp"
#include "invdse/pareto.hpp"
#include "invdse/tensor_net.hpp"

namespace invdse {

struct PredictorHyper {
  int hidden = 256;
  int blocks = 3;
  nn::Activation activation = nn::Activation::relu;
};

struct PredictorTrainConfig {
  int epochs = 200;
  int batch_size = 128;
  nn::AdamConfig adam;
  double holdout_fraction = 0.0;  // share of points withheld to report holdout RMSE
  PredictorHyper net;
};

/// A labeled bitmap; the predictor sees its signed image.
struct LabeledBitmap {
  Bitmap bits;
  QoRVector qor;
};

/// f_pi: signed N x K tensor -> normalized minimization-space objectives.
struct QoRPredictor {
  nn::NetSpec spec;
  nn::NetParams params;
  ObjectiveBounds bounds;
  nn::AdamState optimizer;  // kept for warm-started retraining
  double holdout_rmse = -1.0;  // negative when no holdout was used
  double train_loss = 0.0;

  Objective predict(const Tensor2D& x) const;
  /// One sample per column in, one 3-vector per column out.
  Eigen::MatrixXd predict_batch(const Eigen::MatrixXd& x) const;

  void save(const std::filesystem::path& path) const;
  static QoRPredictor load(const std::filesystem::path& path);
};

/// Regression in normalized space. Bounds default to the labeled set's own bounds and
/// stay frozen afterwards. Throws ConfigError for fewer than two points or degenerate bounds.
QoRPredictor train_predictor(std::span<const LabeledBitmap> labeled, const PredictorTrainConfig& cfg, Rng& rng,
                             const ObjectiveBounds* bounds = nullptr);

/// Warm-started continuation on old + new points; an empty `fresh` set is a no-op.
QoRPredictor retrain(const QoRPredictor& predictor, std::span<const LabeledBitmap> previous,
                     std::span<const LabeledBitmap> fresh, int epochs, int batch_size, Rng& rng);

/// Root-mean-square error in normalized units over a labeled set.
double predictor_rmse(const QoRPredictor& predictor, std::span<const LabeledBitmap> labeled);

struct GuidanceConfig {
  double strength = 1000.0;  // c in s(t) = c sqrt(1 - alpha_t)
  Objective weights{1.0, 1.0, 1.0};
  bool frozen_eps = false;  // ignore eps_theta's dependence on x_t in the gradient

  void check() const;
};

/// sum_k w_k (yhat_k - ystar_k)^2.
double guidance_loss(const Objective& predicted, const Objective& target, const Objective& weights);

struct GuidanceGradient {
  Eigen::MatrixXd eps;       // eps_theta(x_t, t)
  Eigen::MatrixXd x0;        // unclamped x0 estimate
  Eigen::VectorXd loss;      // per sample
  Eigen::MatrixXd gradient;  // dL/dx_t per sample
};

/// L(f(x0_hat(x_t)), y*) and its exact gradient with respect to x_t.
GuidanceGradient guidance_gradient(const DenoiserModel& model, const QoRPredictor& predictor,
                                   const Eigen::MatrixXd& x_t, int t, const Objective& target,
                                   const GuidanceConfig& cfg);

struct GuidedNoise {
  Eigen::MatrixXd eps;
  Eigen::MatrixXd refined;  // eps + s(t) grad (descent on L), or eps where the gradient was not finite
  Eigen::VectorXd loss;
  Eigen::VectorXd gradient_norm;
  std::vector<bool> fallback;
};

GuidedNoise guided_noise(const DenoiserModel& model, const QoRPredictor& predictor, const Eigen::MatrixXd& x_t, int t,
                         const Objective& target, const GuidanceConfig& cfg);

struct GuidanceEvent {
  int step = 0;
  int t = 0;
  double loss = 0.0;           // mean over the batch
  double gradient_norm = 0.0;  // mean over the batch
  int fallbacks = 0;
};

/// Sampler hook that steers every DDIM step toward a target QoR.
class TargetGuidance : public GuidanceHook {
 public:
  TargetGuidance(const DenoiserModel& model, const QoRPredictor& predictor, Objective target, GuidanceConfig cfg);

  Eigen::MatrixXd refine(const Eigen::MatrixXd& x_t, int t, const Eigen::MatrixXd& eps, int step) override;

  const std::vector<GuidanceEvent>& events() const { return events_; }
  int fallback_count() const;

 private:
  const DenoiserModel& model_;
  const QoRPredictor& predictor_;
  Objective target_;
  GuidanceConfig cfg_;
  std::vector<GuidanceEvent> events_;
};

void write_guidance_log(const std::filesystem::path& path, const std::vector<GuidanceEvent>& events);

}  // namespace invdse

#include "invdse/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "invdse/csv.hpp"
#include "json_io.hpp"

namespace invdse {

namespace {

Eigen::MatrixXd stack_inputs(std::span<const LabeledBitmap> labeled, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(labeled.front().bits.bits.size()), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = labeled[idx[k]].bits.to_signed().flat();
  return x;
}

Eigen::MatrixXd stack_targets(std::span<const LabeledBitmap> labeled, const std::vector<std::size_t>& idx,
                              const ObjectiveBounds& bounds) {
  Eigen::MatrixXd y(static_cast<Eigen::Index>(kObjectives), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto n = normalize(labeled[idx[k]].qor, bounds);
    for (std::size_t j = 0; j < kObjectives; ++j) y(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = n[j];
  }
  return y;
}

// Minibatch epochs over columns of (x, y); returns the mean loss of the last epoch.
double run_epochs(QoRPredictor& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int epochs, int batch_size,
                  Rng& rng) {
  const Eigen::Index n = x.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  double last = 0.0;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < n; start += batch_size) {
      Eigen::Index b = std::min<Eigen::Index>(batch_size, n - start);
      Eigen::MatrixXd xb(x.rows(), b), yb(y.rows(), b);
      for (Eigen::Index k = 0; k < b; ++k) {
        xb.col(k) = x.col(order[static_cast<std::size_t>(start + k)]);
        yb.col(k) = y.col(order[static_cast<std::size_t>(start + k)]);
      }
      auto fwd = nn::forward(p.params, p.spec, xb);
      auto loss = nn::mse(fwd.output, yb);
      if (!std::isfinite(loss.value)) throw DivergenceError("predictor training: non-finite loss", p.optimizer.step);
      auto g = nn::backward(p.params, p.spec, fwd.tape, loss.gradient);
      nn::optimizer_step(p.params, g.params, p.optimizer);
      total += loss.value * static_cast<double>(b);
      seen += b;
    }
    last = total / static_cast<double>(seen);
  }
  return last;
}

}  // namespace

Objective QoRPredictor::predict(const Tensor2D& x) const {
  Eigen::MatrixXd out = predict_batch(x.flat());
  return {out(0, 0), out(1, 0), out(2, 0)};
}

Eigen::MatrixXd QoRPredictor::predict_batch(const Eigen::MatrixXd& x) const { return nn::infer(params, spec, x); }

void QoRPredictor::save(const std::filesystem::path& path) const {
  detail::json j;
  j["format"] = "invdse-predictor";
  j["version"] = 1;
  j["spec"] = detail::net_spec_to_json(spec);
  j["param_count"] = params.size();
  j["params"] = detail::vector_to_json(params.values());
  j["bounds"] = {{"lo", bounds.lo}, {"hi", bounds.hi}};
  j["optimizer"] = detail::adam_to_json(optimizer);
  j["holdout_rmse"] = holdout_rmse;
  j["train_loss"] = train_loss;
  detail::write_json_file(path, j);
}

QoRPredictor QoRPredictor::load(const std::filesystem::path& path) {
  auto j = detail::read_json_file(path);
  detail::require_format(j, "invdse-predictor", 1);
  QoRPredictor p;
  p.spec = detail::net_spec_from_json(j.at("spec"));
  p.params = detail::params_from_json(p.spec, j.at("params"));
  p.bounds.lo = j.at("bounds").at("lo").get<Objective>();
  p.bounds.hi = j.at("bounds").at("hi").get<Objective>();
  p.bounds.check();
  p.optimizer = detail::adam_from_json(j.at("optimizer"));
  p.holdout_rmse = j.at("holdout_rmse").get<double>();
  p.train_loss = j.at("train_loss").get<double>();
  return p;
}

QoRPredictor train_predictor(std::span<const LabeledBitmap> labeled, const PredictorTrainConfig& cfg, Rng& rng,
                             const ObjectiveBounds* bounds) {
  if (labeled.size() < 2) throw ConfigError("predictor training needs at least two labeled points");
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw ConfigError("predictor training needs epochs >= 0, batch_size >= 1");
  QoRPredictor p;
  if (bounds) {
    p.bounds = *bounds;
    p.bounds.check();
  } else {
    std::vector<QoRVector> qors;
    for (const auto& l : labeled) qors.push_back(l.qor);
    p.bounds = ObjectiveBounds::from(qors);
  }
  const int width = static_cast<int>(labeled.front().bits.bits.size());
  p.spec = nn::NetSpec::residual_mlp(width, static_cast<int>(kObjectives), cfg.net.hidden, cfg.net.blocks,
                                     cfg.net.activation);
  p.params = nn::NetParams::init(p.spec, rng);
  p.optimizer = nn::AdamState(p.params.size(), cfg.adam);

  std::vector<std::size_t> idx(labeled.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::size_t> holdout;
  auto n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(labeled.size())));
  if (n_hold > 0 && labeled.size() - n_hold >= 2) {
    std::shuffle(idx.begin(), idx.end(), rng);
    holdout.assign(idx.end() - static_cast<std::ptrdiff_t>(n_hold), idx.end());
    idx.resize(idx.size() - n_hold);
  }
  auto x = stack_inputs(labeled, idx);
  auto y = stack_targets(labeled, idx, p.bounds);
  p.train_loss = run_epochs(p, x, y, cfg.epochs, cfg.batch_size, rng);
  if (!holdout.empty()) {
    auto xh = stack_inputs(labeled, holdout);
    auto yh = stack_targets(labeled, holdout, p.bounds);
    p.holdout_rmse = std::sqrt((p.predict_batch(xh) - yh).squaredNorm() / static_cast<double>(yh.size()));
  }
  return p;
}

QoRPredictor retrain(const QoRPredictor& predictor, std::span<const LabeledBitmap> previous,
                     std::span<const LabeledBitmap> fresh, int epochs, int batch_size, Rng& rng) {
  if (fresh.empty() || epochs <= 0) return predictor;
  std::vector<LabeledBitmap> all(previous.begin(), previous.end());
  all.insert(all.end(), fresh.begin(), fresh.end());
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  QoRPredictor p = predictor;
  auto x = stack_inputs(all, idx);
  auto y = stack_targets(all, idx, p.bounds);
  p.train_loss = run_epochs(p, x, y, epochs, batch_size, rng);
  return p;
}

double predictor_rmse(const QoRPredictor& predictor, std::span<const LabeledBitmap> labeled) {
  if (labeled.empty()) return 0.0;
  std::vector<std::size_t> idx(labeled.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto x = stack_inputs(labeled, idx);
  auto y = stack_targets(labeled, idx, predictor.bounds);
  return std::sqrt((predictor.predict_batch(x) - y).squaredNorm() / static_cast<double>(y.size()));
}

// ---------------------------------------------------------------------------

void GuidanceConfig::check() const {
  if (!(strength >= 0.0) || !std::isfinite(strength)) throw ConfigError("guidance strength must be >= 0");
  for (double w : weights) {
    if (!(w > 0.0)) throw ConfigError("guidance weights must be positive");
  }
}

double guidance_loss(const Objective& predicted, const Objective& target, const Objective& weights) {
  double l = 0.0;
  for (std::size_t k = 0; k < kObjectives; ++k) {
    double d = predicted[k] - target[k];
    l += weights[k] * d * d;
  }
  return l;
}

GuidanceGradient guidance_gradient(const DenoiserModel& model, const QoRPredictor& predictor,
                                   const Eigen::MatrixXd& x_t, int t, const Objective& target,
                                   const GuidanceConfig& cfg) {
  const double a = model.schedule.alpha_at(t);
  if (!(a >= 1e-8)) throw ConfigError("guidance undefined for alpha below 1e-8");
  const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);

  GuidanceGradient g;
  auto eps_fwd = model.predict_noise_taped(x_t, t);
  g.eps = eps_fwd.output;
  g.x0 = (x_t - sn * g.eps) / sa;

  auto pred_fwd = nn::forward(predictor.params, predictor.spec, g.x0);
  const Eigen::Index batch = x_t.cols();
  Eigen::MatrixXd dy(static_cast<Eigen::Index>(kObjectives), batch);
  g.loss.resize(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    double l = 0.0;
    for (std::size_t k = 0; k < kObjectives; ++k) {
      auto kk = static_cast<Eigen::Index>(k);
      double d = pred_fwd.output(kk, b) - target[k];
      l += cfg.weights[k] * d * d;
      dy(kk, b) = 2.0 * cfg.weights[k] * d;
    }
    g.loss[b] = l;
  }
  // dL/dx0 through the predictor, then x0 = (x_t - sn eps(x_t)) / sa.
  Eigen::MatrixXd dx0 = nn::backward(predictor.params, predictor.spec, pred_fwd.tape, dy, false).input;
  g.gradient = dx0 / sa;
  if (!cfg.frozen_eps) {
    Eigen::MatrixXd through_eps = nn::backward(model.params, model.spec, eps_fwd.tape, dx0, false).input;
    g.gradient -= (sn / sa) * through_eps;
  }
  return g;
}

GuidedNoise guided_noise(const DenoiserModel& model, const QoRPredictor& predictor, const Eigen::MatrixXd& x_t, int t,
                         const Objective& target, const GuidanceConfig& cfg) {
  cfg.check();
  auto g = guidance_gradient(model, predictor, x_t, t, target, cfg);
  const double s = model.schedule.guidance_scale(t, cfg.strength);
  GuidedNoise out;
  out.eps = g.eps;
  out.refined = g.eps;
  out.loss = g.loss;
  out.gradient_norm.resize(x_t.cols());
  out.fallback.assign(static_cast<std::size_t>(x_t.cols()), false);
  for (Eigen::Index b = 0; b < x_t.cols(); ++b) {
    auto col = g.gradient.col(b);
    out.gradient_norm[b] = col.norm();
    if (!col.allFinite()) {
      out.fallback[static_cast<std::size_t>(b)] = true;
      continue;
    }
    // Adding the gradient moves x0_hat = (x_t - sqrt(1 - alpha) eps) / sqrt(alpha) downhill in L.
    out.refined.col(b) += s * col;
  }
  return out;
}

TargetGuidance::TargetGuidance(const DenoiserModel& model, const QoRPredictor& predictor, Objective target,
                               GuidanceConfig cfg)
    : model_(model), predictor_(predictor), target_(target), cfg_(cfg) {
  cfg_.check();
}

Eigen::MatrixXd TargetGuidance::refine(const Eigen::MatrixXd& x_t, int t, const Eigen::MatrixXd& /*eps*/, int step) {
  auto g = guided_noise(model_, predictor_, x_t, t, target_, cfg_);
  GuidanceEvent ev;
  ev.step = step;
  ev.t = t;
  ev.loss = g.loss.mean();
  ev.gradient_norm = g.gradient_norm.mean();
  ev.fallbacks = static_cast<int>(std::count(g.fallback.begin(), g.fallback.end(), true));
  events_.push_back(ev);
  return g.refined;
}

int TargetGuidance::fallback_count() const {
  int n = 0;
  for (const auto& e : events_) n += e.fallbacks;
  return n;
}

void write_guidance_log(const std::filesystem::path& path, const std::vector<GuidanceEvent>& events) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "step,t,loss,gradient_norm,fallbacks\n";
  for (const auto& e : events) {
    out << e.step << ',' << e.t << ',' << csv::format_double(e.loss) << ',' << csv::format_double(e.gradient_norm)
        << ',' << e.fallbacks << '\n';
  }
}

}  // namespace invdse

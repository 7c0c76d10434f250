#include "invdse/diffusion.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "invdse/csv.hpp"
#include "json_io.hpp"

namespace invdse {

NoiseSchedule NoiseSchedule::make(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("noise schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw ConfigError("noise schedule needs 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.timesteps = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.alpha.resize(static_cast<std::size_t>(T));
  double running = 1.0;
  for (int t = 0; t < T; ++t) {
    double beta = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
    running *= 1.0 - beta;
    s.alpha[static_cast<std::size_t>(t)] = running;
  }
  return s;
}

double NoiseSchedule::alpha_at(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > timesteps) throw ConfigError(fmt::format("timestep {} outside 1..{}", t, timesteps));
  return alpha[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::guidance_scale(int t, double c) const { return c * std::sqrt(1.0 - alpha_at(t)); }

Tensor2D forward_noise(const Tensor2D& x0, int t, const Tensor2D& eps, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.timesteps) throw ConfigError(fmt::format("timestep {} outside 1..{}", t, schedule.timesteps));
  if (!x0.same_shape(eps)) throw ShapeError("forward_noise: noise shape differs from data");
  double a = schedule.alpha_at(t);
  double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
  Tensor2D out(x0.rows, x0.cols);
  for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] = sa * x0.data[k] + sn * eps.data[k];
  return out;
}

Eigen::MatrixXd x0_from_noise(const Eigen::MatrixXd& x_t, const Eigen::MatrixXd& eps, double alpha) {
  if (!(alpha >= 1e-8)) throw ConfigError("x0 prediction undefined for alpha below 1e-8");
  return (x_t - std::sqrt(1.0 - alpha) * eps) / std::sqrt(alpha);
}

// ---------------------------------------------------------------------------

DenoiserModel DenoiserModel::create(std::size_t rows, std::size_t cols, NoiseSchedule schedule,
                                    const DenoiserHyper& h, Rng& rng) {
  DenoiserModel m;
  m.rows = rows;
  m.cols = cols;
  int width = static_cast<int>(rows * cols);
  m.spec = nn::NetSpec::residual_mlp(width, width, h.hidden, h.blocks, h.activation, h.embed_dim);
  m.params = nn::NetParams::init(m.spec, rng);
  m.schedule = std::move(schedule);
  return m;
}

Eigen::MatrixXd DenoiserModel::embed(int t, Eigen::Index batch) const {
  Eigen::VectorXd e = nn::timestep_embedding(t, spec.embed_width);
  return e.replicate(1, batch);
}

Eigen::MatrixXd DenoiserModel::predict_noise(const Eigen::MatrixXd& x_t, int t) const {
  Eigen::MatrixXd e = embed(t, x_t.cols());
  return nn::infer(params, spec, x_t, &e);
}

nn::ForwardResult DenoiserModel::predict_noise_taped(const Eigen::MatrixXd& x_t, int t) const {
  Eigen::MatrixXd e = embed(t, x_t.cols());
  return nn::forward(params, spec, x_t, &e);
}

void DenoiserModel::save(const std::filesystem::path& path, std::uint64_t seed) const {
  detail::json j;
  j["format"] = "invdse-denoiser";
  j["version"] = 1;
  j["rows"] = rows;
  j["cols"] = cols;
  j["seed"] = seed;
  j["schedule"] = {{"timesteps", schedule.timesteps},
                   {"beta_start", schedule.beta_start},
                   {"beta_end", schedule.beta_end}};
  j["spec"] = detail::net_spec_to_json(spec);
  j["param_count"] = params.size();
  j["params"] = detail::vector_to_json(params.values());
  detail::write_json_file(path, j);
}

DenoiserModel DenoiserModel::load(const std::filesystem::path& path) {
  auto j = detail::read_json_file(path);
  detail::require_format(j, "invdse-denoiser", 1);
  DenoiserModel m;
  m.rows = j.at("rows").get<std::size_t>();
  m.cols = j.at("cols").get<std::size_t>();
  const auto& js = j.at("schedule");
  m.schedule = NoiseSchedule::make(js.at("timesteps").get<int>(), js.at("beta_start").get<double>(),
                                   js.at("beta_end").get<double>());
  m.spec = detail::net_spec_from_json(j.at("spec"));
  m.params = detail::params_from_json(m.spec, j.at("params"));
  return m;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd stack_columns(const std::vector<SignedTensor>& tensors) {
  if (tensors.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(tensors.front().size()), static_cast<Eigen::Index>(tensors.size()));
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    if (tensors[k].size() != tensors.front().size()) throw ShapeError("stack_columns: ragged tensors");
    m.col(static_cast<Eigen::Index>(k)) = tensors[k].flat();
  }
  return m;
}

TrainHistory train_denoiser(DenoiserModel& model, const std::vector<SignedTensor>& data,
                            const DenoiserTrainConfig& cfg, Rng& rng) {
  if (data.empty()) throw ConfigError("denoiser training set is empty");
  if (cfg.batch_size < 1 || cfg.steps < 0) throw ConfigError("denoiser training needs batch_size >= 1, steps >= 0");
  Eigen::MatrixXd all = stack_columns(data);
  if (all.rows() != model.flat_width()) throw ShapeError("training tensors do not match the denoiser width");

  const Eigen::Index width = all.rows();
  const Eigen::Index batch = cfg.batch_size;
  const int T = model.schedule.timesteps;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, T);
  std::normal_distribution<double> normal(0.0, 1.0);
  nn::AdamState opt(model.params.size(), cfg.adam);

  TrainHistory history;
  history.loss.reserve(static_cast<std::size_t>(cfg.steps));
  Eigen::MatrixXd x_t(width, batch), eps(width, batch), emb(model.embed_dim(), batch);
  for (long step = 0; step < cfg.steps; ++step) {
    for (Eigen::Index b = 0; b < batch; ++b) {
      auto idx = static_cast<Eigen::Index>(pick(rng));
      int t = pick_t(rng);
      double a = model.schedule.alpha_at(t);
      for (Eigen::Index r = 0; r < width; ++r) eps(r, b) = normal(rng);
      x_t.col(b) = std::sqrt(a) * all.col(idx) + std::sqrt(1.0 - a) * eps.col(b);
      emb.col(b) = nn::timestep_embedding(t, model.embed_dim());
    }
    auto fwd = nn::forward(model.params, model.spec, x_t, &emb);
    auto loss = nn::mse(fwd.output, eps);
    if (!std::isfinite(loss.value)) throw DivergenceError("denoiser training: non-finite loss", step);
    history.loss.push_back(loss.value);
    auto grads = nn::backward(model.params, model.spec, fwd.tape, loss.gradient);
    try {
      nn::optimizer_step(model.params, grads.params, opt);
    } catch (const DivergenceError&) {
      throw DivergenceError("denoiser training: non-finite gradient", step);
    }
  }
  return history;
}

void write_loss_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "step,loss\n";
  for (std::size_t i = 0; i < history.loss.size(); ++i) out << i << ',' << csv::format_double(history.loss[i]) << '\n';
}

Tensor2D predict_x0(const DenoiserModel& model, const Tensor2D& x_t, int t) {
  if (x_t.rows != model.rows || x_t.cols != model.cols) throw ShapeError("predict_x0: tensor shape mismatch");
  Eigen::MatrixXd x = x_t.flat();
  Eigen::MatrixXd eps = model.predict_noise(x, t);
  return Tensor2D::from_flat(model.rows, model.cols, x0_from_noise(x, eps, model.schedule.alpha_at(t)).col(0));
}

// ---------------------------------------------------------------------------

SamplerConfig SamplerConfig::uniform(const NoiseSchedule& schedule, int steps, bool clamp_x0) {
  if (steps < 1 || steps > schedule.timesteps) {
    throw ConfigError(fmt::format("sampler steps must be in 1..{}", schedule.timesteps));
  }
  SamplerConfig s;
  s.steps = steps;
  s.clamp_x0 = clamp_x0;
  for (int k = 1; k <= steps; ++k) {
    s.timesteps.push_back(static_cast<int>(static_cast<long>(k) * schedule.timesteps / steps));
  }
  s.check(schedule);
  return s;
}

void SamplerConfig::check(const NoiseSchedule& schedule) const {
  if (static_cast<int>(timesteps.size()) != steps || steps < 1) throw ConfigError("sampler subsequence length != S");
  for (std::size_t k = 0; k < timesteps.size(); ++k) {
    if (timesteps[k] < 1 || timesteps[k] > schedule.timesteps) throw ConfigError("sampler timestep out of range");
    if (k > 0 && timesteps[k] <= timesteps[k - 1]) throw ConfigError("sampler subsequence not strictly increasing");
    if (schedule.alpha_at(timesteps[k]) < 1e-8) throw ConfigError("sampler timestep has alpha below 1e-8");
  }
  if (timesteps.back() != schedule.timesteps) throw ConfigError("sampler subsequence must end at T");
}

SampleResult ddim_sample(const DenoiserModel& model, const SamplerConfig& sampler, Rng& rng, GuidanceHook* guidance,
                         Eigen::Index batch) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(model.flat_width(), batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) x(r, b) = normal(rng);
  }
  return ddim_sample_from(model, sampler, std::move(x), guidance);
}

SampleResult ddim_sample_from(const DenoiserModel& model, const SamplerConfig& sampler, Eigen::MatrixXd x,
                              GuidanceHook* guidance) {
  sampler.check(model.schedule);
  if (x.rows() != model.flat_width()) throw ShapeError("sampler start does not match the denoiser width");
  SampleResult result;
  Eigen::MatrixXd x0;
  int step = 0;
  for (int k = sampler.steps - 1; k >= 0; --k, ++step) {
    const int t = sampler.timesteps[static_cast<std::size_t>(k)];
    const int t_prev = k > 0 ? sampler.timesteps[static_cast<std::size_t>(k - 1)] : 0;
    Eigen::MatrixXd eps = model.predict_noise(x, t);
    ++result.stats.model_evaluations;
    if (guidance) {
      eps = guidance->refine(x, t, eps, step);
      ++result.stats.guidance_evaluations;
    }
    const double a = model.schedule.alpha_at(t);
    x0 = x0_from_noise(x, eps, a);
    if (sampler.clamp_x0) {
      // Keep the update consistent with the clamped estimate, otherwise a large
      // guided correction leaks into x unbounded.
      x0 = x0.cwiseMax(-1.0).cwiseMin(1.0);
      eps = (x - std::sqrt(a) * x0) / std::sqrt(1.0 - a);
    }
    const double a_prev = model.schedule.alpha_at(t_prev);
    x = std::sqrt(a_prev) * x0 + std::sqrt(1.0 - a_prev) * eps;
    if (!x.allFinite() || !x0.allFinite()) throw DivergenceError("sampler: non-finite state", step);
  }
  result.x0 = std::move(x0);
  return result;
}

Tensor2D column_tensor(const DenoiserModel& model, const Eigen::MatrixXd& batch, Eigen::Index k) {
  return Tensor2D::from_flat(model.rows, model.cols, batch.col(k));
}

}  // namespace invdse

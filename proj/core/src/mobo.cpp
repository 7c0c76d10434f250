#include "invdse/mobo.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <unordered_set>

#include "invdse/csv.hpp"
#include "invdse/seeds.hpp"

namespace invdse {

double se_kernel(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b,
                 double signal, double length) {
  return signal * signal * std::exp(-(a - b).squaredNorm() / (2.0 * length * length));
}

double GPModel::kernel(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) const {
  return se_kernel(a, b, hyper_.signal, hyper_.length);
}

GPPosterior GPModel::posterior(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != x_.rows()) throw ShapeError("gp posterior: input width mismatch");
  Eigen::VectorXd k(x_.cols());
  for (Eigen::Index i = 0; i < x_.cols(); ++i) k[i] = kernel(x, x_.col(i));
  GPPosterior p;
  p.mean = prior_mean_ + k.dot(alpha_);
  Eigen::VectorXd v = llt_.matrixL().solve(k);
  double var = hyper_.signal * hyper_.signal - v.squaredNorm();
  p.stddev = std::sqrt(std::max(0.0, var));
  return p;
}

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.cols();
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) d(i, j) = d(j, i) = (x.col(i) - x.col(j)).squaredNorm();
  }
  return d;
}

struct Factored {
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd alpha;
  double lml = -std::numeric_limits<double>::infinity();
  double noise = 0.0;
  bool ok = false;
};

Factored factor(const Eigen::MatrixXd& d2, const Eigen::VectorXd& r, double signal, double length, double floor,
                double ceiling) {
  const Eigen::Index n = d2.rows();
  Eigen::MatrixXd k = (signal * signal) * (-d2 / (2.0 * length * length)).array().exp().matrix();
  Factored f;
  for (double noise = floor; noise <= ceiling * (1.0 + 1e-12); noise *= 10.0) {
    Eigen::MatrixXd kn = k;
    kn.diagonal().array() += noise;
    f.llt.compute(kn);
    if (f.llt.info() != Eigen::Success) continue;
    Eigen::VectorXd diag = f.llt.matrixL().toDenseMatrix().diagonal();
    if (!(diag.array() > 0.0).all() || !diag.allFinite()) continue;
    f.alpha = f.llt.solve(r);
    f.lml = -0.5 * r.dot(f.alpha) - diag.array().log().sum() -
            0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    f.noise = noise;
    f.ok = std::isfinite(f.lml);
    if (f.ok) return f;
  }
  f.ok = false;
  return f;
}

}  // namespace

GPModel gp_fit(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, const GPFitOptions& opts) {
  if (inputs.cols() < 2) throw ConfigError("gp fit needs at least two points");
  if (targets.size() != inputs.cols()) throw ShapeError("gp fit: one target per input column required");
  if (!inputs.allFinite() || !targets.allFinite()) throw ConfigError("gp fit: non-finite training data");
  if (!(opts.noise_floor > 0.0) || opts.noise_ceiling < opts.noise_floor) throw ConfigError("gp fit: bad noise range");

  GPModel m;
  m.x_ = inputs;
  m.y_ = targets;
  m.prior_mean_ = opts.center_targets ? targets.mean() : 0.0;
  Eigen::VectorXd r = targets.array() - m.prior_mean_;
  Eigen::MatrixXd d2 = squared_distances(inputs);

  std::vector<std::pair<double, double>> grid;  // (signal, length)
  if (opts.hyper_opt) {
    for (double l : opts.length_grid) {
      for (double s : opts.signal_grid) grid.emplace_back(s, l);
    }
  } else {
    grid.emplace_back(opts.fixed.signal, opts.fixed.length);
  }
  for (const auto& [s, l] : grid) {
    if (!(s > 0.0) || !(l > 0.0)) throw ConfigError("gp hyperparameters must be positive");
  }

  Factored best;
  GPHyper best_h;
  const double floor = opts.hyper_opt ? opts.noise_floor : std::max(opts.noise_floor, opts.fixed.noise);
  for (const auto& [s, l] : grid) {
    auto f = factor(d2, r, s, l, floor, opts.noise_ceiling);
    if (f.ok && (!best.ok || f.lml > best.lml)) {
      best = std::move(f);
      best_h = {s, l, best.noise};
    }
  }
  if (!best.ok) throw Error("gp fit: kernel matrix not positive definite up to the noise ceiling");
  m.hyper_ = best_h;
  m.llt_ = std::move(best.llt);
  m.alpha_ = std::move(best.alpha);
  m.lml_ = best.lml;
  return m;
}

// ---------------------------------------------------------------------------

void MoboConfig::check() const {
  if (pool_size == 0) throw ConfigError("mobo pool size must be positive");
  if (ehvi_samples == 0) throw ConfigError("mobo needs at least one EHVI sample");
  if (refit_every < 1) throw ConfigError("mobo refit_every must be >= 1");
}

Eigen::MatrixXd encode_inputs(const DesignSpace& space, std::span<const Configuration> configs) {
  const Eigen::Index width = static_cast<Eigen::Index>(space.num_params() * kMaxCandidates);
  Eigen::MatrixXd x(width, static_cast<Eigen::Index>(configs.size()));
  for (std::size_t i = 0; i < configs.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = space.to_signed(configs[i]).flat();
  return x;
}

std::vector<CandidateScore> score_pool(const GPTriple& gps, const DesignSpace& space, std::span<const Configuration> pool,
                                       const ParetoArchive& archive, std::size_t ehvi_samples, std::uint64_t seed) {
  const auto front = archive.front_points();
  const auto x = encode_inputs(space, pool);
  std::vector<CandidateScore> out(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    auto& c = out[i];
    c.config = pool[i];
    for (std::size_t k = 0; k < kObjectives; ++k) {
      auto p = gps[k].posterior(x.col(static_cast<Eigen::Index>(i)));
      c.mean[k] = p.mean;
      c.stddev[k] = p.stddev;
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    c.ehvi = ehvi_mc(c.mean, c.stddev, front, archive.reference(), ehvi_samples, rng);
  }
  return out;
}

std::size_t best_candidate(const std::vector<CandidateScore>& scores) {
  if (scores.empty()) throw Error("no candidates to choose from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i].ehvi.value > scores[best].ehvi.value) best = i;
  }
  return best;
}

MoboState::MoboState(const DesignSpace& space, ParetoArchive archive, MoboConfig cfg)
    : space_(&space), archive_(std::move(archive)), cfg_(cfg) {
  cfg_.check();
  refit(true);
}

void MoboState::refit(bool search) {
  std::vector<Configuration> configs;
  configs.reserve(archive_.size());
  for (const auto& r : archive_.records()) configs.push_back(r.config);
  auto x = encode_inputs(*space_, configs);
  for (std::size_t k = 0; k < kObjectives; ++k) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(configs.size()));
    for (std::size_t i = 0; i < configs.size(); ++i) y[static_cast<Eigen::Index>(i)] = archive_.records()[i].normalized[k];
    GPFitOptions o;
    o.center_targets = cfg_.center_targets;
    o.hyper_opt = search && cfg_.hyper_opt;
    o.fixed = hyper_[k];
    if (!cfg_.hyper_opt) o.fixed = GPHyper{};
    o.fixed.noise = o.noise_floor;
    gps_[k] = gp_fit(x, y, o);
    if (o.hyper_opt) hyper_[k] = gps_[k].hyper();
  }
  if (search) since_search_ = 0;
}

std::vector<Configuration> MoboState::draw_pool(std::size_t size, Rng& rng) const {
  std::unordered_set<Configuration, ConfigurationHash> seen;
  std::vector<Configuration> pool;
  for (std::size_t i = 0; i < size; ++i) {
    auto c = space_->random_config(rng);
    if (archive_.contains(c) || !seen.insert(c).second) continue;
    pool.push_back(std::move(c));
  }
  return pool;
}

MoboStepRecord MoboState::step(QoREvaluator& oracle, Rng& rng) {
  auto pool = draw_pool(cfg_.pool_size, rng);
  if (pool.empty()) pool = draw_pool(4 * cfg_.pool_size, rng);
  if (pool.empty()) throw Error("mobo: candidate pool is empty after deduplication");
  return step_with_pool(oracle, pool, rng);
}

MoboStepRecord MoboState::step_with_pool(QoREvaluator& oracle, std::span<const Configuration> pool, Rng& rng) {
  if (pool.empty()) throw Error("mobo: empty candidate pool");
  for (const auto& c : pool) {
    if (archive_.contains(c)) throw Error("mobo: pool contains an archived configuration");
  }
  const std::uint64_t seed = rng();
  auto scores = score_pool(gps_, *space_, pool, archive_, cfg_.ehvi_samples, seed);
  const auto& pick = scores[best_candidate(scores)];

  MoboStepRecord rec;
  rec.iteration = iteration_;
  rec.config = pick.config;
  rec.ehvi = pick.ehvi.value;
  rec.mean = pick.mean;
  rec.stddev = pick.stddev;
  rec.qor = oracle.evaluate(pick.config);
  archive_.add(pick.config, rec.qor, iteration_);
  rec.hypervolume = archive_.hypervolume();
  ++iteration_;
  ++since_search_;
  refit(since_search_ >= cfg_.refit_every);
  return rec;
}

void write_mobo_trace(const std::filesystem::path& path, const DesignSpace& space,
                      const std::vector<MoboStepRecord>& steps) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "iteration,config,ehvi,mean_0,mean_1,mean_2,stddev_0,stddev_1,stddev_2,performance,power,area,hypervolume\n";
  for (const auto& s : steps) {
    out << s.iteration << ',' << csv::join(space.literals(s.config), ";") << ',' << csv::format_double(s.ehvi);
    for (double v : s.mean) out << ',' << csv::format_double(v);
    for (double v : s.stddev) out << ',' << csv::format_double(v);
    out << ',' << csv::format_double(s.qor.performance) << ',' << csv::format_double(s.qor.power) << ','
        << csv::format_double(s.qor.area) << ',' << csv::format_double(s.hypervolume) << '\n';
  }
}

}  // namespace invdse

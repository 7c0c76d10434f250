// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/LU>
#include <nlohmann/json.hpp>

#include "invdse/harness.hpp"

using namespace invdse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

const DesignSpace& S() { return DesignSpace::accelerator(); }

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Eigen::MatrixXd uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Eigen::VectorXd gaussian(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> g;
  Eigen::VectorXd v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

std::vector<LabeledBitmap> labeled_set(std::size_t n, std::uint64_t seed) {
  SyntheticOracle oracle(S(), {.seed = 7});
  Rng rng(seed);
  std::vector<LabeledBitmap> out;
  std::set<Configuration> seen;
  while (out.size() < n) {
    auto c = S().random_config(rng);
    if (seen.insert(c).second) out.push_back({S().encode(c), oracle.evaluate(c)});
  }
  return out;
}

// ---------------------------------------------------------------------------

Outcome golden_values() {
  struct Row {
    double perf, power, area, ppa;
  };
  const Row rows[] = {{0.652, 148.0e-3, 5.97e5, 0.48e-5}, {0.662, 130.6e-3, 2.83e5, 1.19e-5}, {0.085, 9.7e-3, 0.60e5, 1.24e-5}};
  bool ok = std::abs(perf_metric(16, 386.8) - 0.662) <= 0.001;
  ok &= std::abs(perf_metric(16, 392.7) - 0.652) <= 0.001;
  ok &= std::abs(perf_metric(8, 751.7) - 0.085) <= 0.001;
  std::string d = "perf(16,386.8)=" + fmt_num(perf_metric(16, 386.8));
  for (const auto& r : rows) {
    double v = ppa_tradeoff(r.perf, r.power, r.area);
    ok &= std::abs(v - r.ppa) <= 0.01e-5;
    d += " ppa=" + fmt_num(v);
  }
  return {ok, d};
}

Outcome hypervolume_exactness() {
  const Objective r{1, 1, 1};
  std::vector<Objective> two{{0, 0.5, 0.5}, {0.5, 0, 0.5}};
  bool ok = hypervolume(two, r) == 0.375;
  double worst_z = 0.0;
  Rng rng(2001);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int f = 0; f < 20; ++f) {
    std::vector<Objective> pts;
    const int n = 1 + f % 10;
    while (static_cast<int>(pts.size()) < n) pts.push_back({u(rng), u(rng), u(rng)});
    const double exact = hypervolume(pts, r);
    const int samples = 1'000'000;
    long hits = 0;
    for (int k = 0; k < samples; ++k) {
      Objective z{u(rng), u(rng), u(rng)};
      for (const auto& p : pts) {
        if (weakly_dominates(p, z)) {
          ++hits;
          break;
        }
      }
    }
    const double p = static_cast<double>(hits) / samples;
    const double se = std::sqrt(p * (1 - p) / samples);
    const double z = se > 0 ? std::abs(exact - p) / se : (exact == p ? 0.0 : 1e9);
    worst_z = std::max(worst_z, z);
  }
  ok &= worst_z <= 3.0;
  return {ok, "two-box=" + fmt_num(hypervolume(two, r)) + " worst |z| over 20 fronts=" + fmt_num(worst_z)};
}

Outcome front_equivalence() {
  bool ok = true;
  std::size_t sizes = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(3000 + seed);
    std::uniform_int_distribution<int> grid(0, 20);  // coarse grid forces ties and duplicates
    std::vector<Objective> pts(1000);
    for (auto& p : pts) p = {grid(rng) / 20.0, grid(rng) / 20.0, grid(rng) / 20.0};
    std::vector<std::size_t> brute;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      bool dominated = false;
      for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
        bool le = true, lt = false;
        for (std::size_t k = 0; k < 3; ++k) {
          le &= pts[j][k] <= pts[i][k];
          lt |= pts[j][k] < pts[i][k];
        }
        dominated = le && lt;
      }
      if (!dominated) brute.push_back(i);
    }
    ok &= pareto_front(pts) == brute;
    sizes += brute.size();
  }
  return {ok, "10 seeds x 1000 points, mean front size " + fmt_num(sizes / 10.0)};
}

Outcome gradient_fidelity() {
  double worst_net = 0.0;
  for (int n = 0; n < 10; ++n) {
    for (auto act : {nn::Activation::relu, nn::Activation::tanh, nn::Activation::identity}) {
      Rng rng(4000 + n * 3 + static_cast<int>(act));
      const int embed = n % 2 ? 4 : 0;
      auto spec = nn::NetSpec::residual_mlp(5, 3, 6, 1, act, embed);
      // Every parameter random, biases included: exact ReLU kinks then have probability zero.
      nn::NetParams p(spec);
      p.assign(uniform(rng, static_cast<Eigen::Index>(spec.param_count()), 1).col(0));
      Eigen::MatrixXd x = uniform(rng, 5, 2);
      Eigen::MatrixXd e = uniform(rng, std::max(embed, 1), 2);
      const Eigen::MatrixXd* ep = embed ? &e : nullptr;
      Eigen::MatrixXd w = uniform(rng, 3, 2);
      auto f = nn::forward(p, spec, x, ep);
      auto g = nn::backward(p, spec, f.tape, w);
      auto objective = [&](const nn::NetParams& q, const Eigen::MatrixXd& xi) {
        return (nn::infer(q, spec, xi, ep).array() * w.array()).sum();
      };
      const double h = 1e-6;
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto pp = p, pm = p;
        pp.mutable_values()[static_cast<Eigen::Index>(i)] += h;
        pm.mutable_values()[static_cast<Eigen::Index>(i)] -= h;
        double fd = (objective(pp, x) - objective(pm, x)) / (2 * h);
        worst_net = std::max(worst_net, rel_err(g.params[static_cast<Eigen::Index>(i)], fd));
      }
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::MatrixXd xp = x, xm = x;
        xp.data()[i] += h;
        xm.data()[i] -= h;
        double fd = (objective(p, xp) - objective(p, xm)) / (2 * h);
        worst_net = std::max(worst_net, rel_err(g.input.data()[i], fd));
      }
    }
  }

  // Full chain x_t -> eps -> x0 -> predictor -> loss on the production network shape.
  double worst_chain = 0.0;
  auto data = labeled_set(64, 4100);
  PredictorTrainConfig pc;
  pc.epochs = 20;
  pc.batch_size = 32;
  pc.net = {32, 2, nn::Activation::tanh};
  Rng prng(4101);
  auto predictor = train_predictor(data, pc, prng);
  for (auto act : {nn::Activation::relu, nn::Activation::tanh}) {
    Rng rng(4102 + static_cast<int>(act));
    DenoiserHyper dh;
    dh.hidden = 32;
    dh.blocks = 2;
    dh.embed_dim = 16;
    dh.activation = act;
    auto model = DenoiserModel::create(16, 7, NoiseSchedule::make(1000), dh, rng);
    const Objective target{0.2, 0.4, 0.3};
    GuidanceConfig cfg;
    cfg.weights = {1.0, 0.5, 2.0};
    auto composite = [&](const Eigen::VectorXd& x, int t) {
      double a = model.schedule.alpha_at(t);
      Eigen::VectorXd eps = model.predict_noise(x, t).col(0);
      Eigen::VectorXd x0 = (x - std::sqrt(1 - a) * eps) / std::sqrt(a);
      Eigen::MatrixXd y = predictor.predict_batch(x0);
      return guidance_loss({y(0, 0), y(1, 0), y(2, 0)}, target, cfg.weights);
    };
    for (int t : {20, 300, 900}) {
      Eigen::VectorXd x = gaussian(rng, 112);
      auto g = guidance_gradient(model, predictor, x, t, target, cfg);
      const double h = 1e-5;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        double fd = (composite(xp, t) - composite(xm, t)) / (2 * h);
        worst_chain = std::max(worst_chain, rel_err(g.gradient(i, 0), fd));
      }
    }
  }
  return {worst_net <= 1e-4 && worst_chain <= 1e-3,
          "nets worst rel err " + fmt_num(worst_net) + ", full chain worst rel err " + fmt_num(worst_chain)};
}

Outcome x0_inversion() {
  auto sched = NoiseSchedule::make(1000);
  Rng rng(5000);
  std::uniform_int_distribution<int> ut(1, 1000);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    auto c = S().random_config(rng);
    auto x0 = S().to_signed(c);
    const int t = ut(rng);
    Tensor2D eps = x0;
    std::normal_distribution<double> g;
    for (auto& v : eps.data) v = g(rng);
    auto xt = forward_noise(x0, t, eps, sched);
    Eigen::MatrixXd rec = x0_from_noise(xt.flat(), eps.flat(), sched.alpha_at(t));
    worst = std::max(worst, (rec.col(0) - x0.flat()).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-9, "max |x0 - x0_hat| over 100 triples " + fmt_num(worst)};
}

Outcome distribution_capture() {
  Rng data_rng(6000);
  auto a = S().random_config(data_rng), b = S().random_config(data_rng);
  Rng rng(6001);
  DenoiserHyper dh;
  dh.hidden = 256;
  dh.blocks = 3;
  dh.embed_dim = 32;
  auto m = DenoiserModel::create(16, 7, NoiseSchedule::make(1000), dh, rng);
  DenoiserTrainConfig tc;
  tc.steps = 5000;
  tc.batch_size = 64;
  train_denoiser(m, {S().to_signed(a), S().to_signed(b)}, tc, rng);
  auto r = ddim_sample(m, SamplerConfig::uniform(m.schedule, 50), rng, nullptr, 200);
  int hits = 0, valid = 0;
  for (Eigen::Index k = 0; k < 200; ++k) {
    auto c = S().decode(column_tensor(m, r.x0, k));
    hits += c == a || c == b;
    valid += S().is_valid(S().legalize(c));
  }
  return {hits >= 180 && valid == 200,
          std::to_string(hits) + "/200 on the training set, " + std::to_string(valid) + "/200 valid after legalization"};
}

Outcome guidance_efficacy() {
  double guided_sum = 0.0, plain_sum = 0.0;
  std::string d;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(derive_seed(seed, "toy"));
    std::vector<SignedTensor> pool;
    for (int k = 0; k < 1000; ++k) pool.push_back(S().to_signed(S().random_config(rng)));
    DenoiserHyper dh;
    dh.hidden = 128;
    dh.blocks = 2;
    dh.embed_dim = 32;
    auto model = DenoiserModel::create(16, 7, NoiseSchedule::make(1000), dh, rng);
    DenoiserTrainConfig tc;
    tc.steps = 4000;
    tc.batch_size = 64;
    train_denoiser(model, pool, tc, rng);

    auto labeled = labeled_set(200, derive_seed(seed, "labels"));
    PredictorTrainConfig pc;
    pc.epochs = 300;
    pc.batch_size = 32;
    pc.net = {64, 2, nn::Activation::tanh};
    auto predictor = train_predictor(labeled, pc, rng);

    std::vector<Configuration> cs;
    std::vector<QoRVector> qs;
    for (const auto& l : labeled) {
      cs.push_back(S().decode(l.bits.to_signed()));
      qs.push_back(l.qor);
    }
    auto archive = ParetoArchive::seeded(cs, qs, 0.1);
    auto target = select_target(archive, {0.1, 64}, rng).target;

    auto sampler = SamplerConfig::uniform(model.schedule, 50);
    const Eigen::Index n = 64;
    Eigen::MatrixXd start(112, n);
    std::normal_distribution<double> g;
    for (Eigen::Index i = 0; i < start.size(); ++i) start.data()[i] = g(rng);
    TargetGuidance hook(model, predictor, target, GuidanceConfig{});
    auto guided = ddim_sample_from(model, sampler, start, &hook).x0;
    auto plain = ddim_sample_from(model, sampler, start, nullptr).x0;
    auto mean_loss = [&](const Eigen::MatrixXd& x0) {
      Eigen::MatrixXd y = predictor.predict_batch(x0);
      double s = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) s += guidance_loss({y(0, k), y(1, k), y(2, k)}, target, {1, 1, 1});
      return s / static_cast<double>(n);
    };
    double lg = mean_loss(guided), lp = mean_loss(plain);
    guided_sum += lg;
    plain_sum += lp;
    d += " s" + std::to_string(seed) + ":" + fmt_num(lg) + "/" + fmt_num(lp);
  }
  const double reduction = 1.0 - guided_sum / plain_sum;
  return {reduction >= 0.30, "mean L guided/unguided" + d + "; reduction " + fmt_num(100 * reduction) + "%"};
}

Outcome linearity_and_schedule() {
  Rng rng(8000);
  DenoiserHyper dh;
  dh.hidden = 32;
  dh.blocks = 2;
  dh.embed_dim = 16;
  auto model = DenoiserModel::create(16, 7, NoiseSchedule::make(1000), dh, rng);
  auto data = labeled_set(64, 8001);
  PredictorTrainConfig pc;
  pc.epochs = 10;
  pc.batch_size = 32;
  pc.net = {32, 2, nn::Activation::tanh};
  auto predictor = train_predictor(data, pc, rng);
  double worst = 0.0;
  for (int t : {1, 100, 500, 1000}) {
    Eigen::MatrixXd x(112, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gaussian(rng, 1)[0];
    auto at = [&](double c) {
      GuidanceConfig cfg;
      cfg.strength = c;
      return guided_noise(model, predictor, x, t, {0.1, 0.2, 0.3}, cfg).refined;
    };
    Eigen::MatrixXd r0 = at(0), r1 = at(1), r2 = at(2);
    const double scale = std::max(1.0, (r2 - r0).cwiseAbs().maxCoeff());
    worst = std::max(worst, ((r2 - r0) - 2.0 * (r1 - r0)).cwiseAbs().maxCoeff() / scale);
    auto eps = model.predict_noise(x, t);
    worst = std::max(worst, (r0 - eps).cwiseAbs().maxCoeff());
  }
  bool monotone = true;
  for (int t = 2; t <= 1000; ++t)
    monotone &= model.schedule.guidance_scale(t, 1000.0) > model.schedule.guidance_scale(t - 1, 1000.0);
  const double expect = 1000.0 * std::sqrt(1.0 - model.schedule.alpha_at(500));
  bool formula = model.schedule.guidance_scale(500, 1000.0) == expect;
  return {worst <= 1e-12 && monotone && formula,
          "superposition residual " + fmt_num(worst) + ", s(t) strictly increasing " + (monotone ? "yes" : "no")};
}

Outcome gp_correctness() {
  Rng rng(9000);
  std::vector<Configuration> cs;
  std::set<Configuration> seen;
  while (cs.size() < 50) {
    auto c = S().random_config(rng);
    if (seen.insert(c).second) cs.push_back(c);
  }
  std::vector<Configuration> train(cs.begin(), cs.begin() + 40);
  auto X = encode_inputs(S(), train);
  Eigen::VectorXd y(40);
  for (Eigen::Index i = 0; i < 40; ++i) y[i] = std::sin(X.col(i).head(20).sum()) + 0.1 * gaussian(rng, 1)[0];
  auto m = gp_fit(X, y);
  const auto& h = m.hyper();
  double worst_train = 0.0;
  bool in_band = true;
  for (Eigen::Index i = 0; i < 40; ++i) {
    double dev = std::abs(m.posterior(X.col(i)).mean - y[i]);
    worst_train = std::max(worst_train, dev / std::sqrt(h.noise));
    in_band &= dev <= 3 * std::sqrt(h.noise);
  }
  // Independent path: dense LU of the full kernel matrix.
  Eigen::MatrixXd K(40, 40);
  for (Eigen::Index i = 0; i < 40; ++i)
    for (Eigen::Index j = 0; j < 40; ++j)
      K(i, j) = h.signal * h.signal * std::exp(-(X.col(i) - X.col(j)).squaredNorm() / (2 * h.length * h.length));
  K.diagonal().array() += h.noise;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  Eigen::VectorXd resid = y.array() - m.prior_mean();
  double worst_dense = 0.0;
  for (std::size_t p = 40; p < 50; ++p) {
    Eigen::VectorXd x = S().to_signed(cs[p]).flat();
    Eigen::VectorXd k(40);
    for (Eigen::Index i = 0; i < 40; ++i)
      k[i] = h.signal * h.signal * std::exp(-(x - X.col(i)).squaredNorm() / (2 * h.length * h.length));
    double mean = m.prior_mean() + k.dot(lu.solve(resid));
    double sd = std::sqrt(std::max(0.0, h.signal * h.signal - k.dot(lu.solve(k))));
    auto post = m.posterior(x);
    worst_dense = std::max({worst_dense, std::abs(post.mean - mean), std::abs(post.stddev - sd)});
  }
  Eigen::VectorXd far = Eigen::VectorXd::Constant(X.rows(), 1000.0);
  auto pf = m.posterior(far);
  bool reverts = std::abs(pf.mean - m.prior_mean()) <= 1e-12 && std::abs(pf.stddev - h.signal) <= 1e-12;
  GPFitOptions plain;
  plain.center_targets = false;
  auto m0 = gp_fit(X, y, plain);
  reverts &= std::abs(m0.posterior(far).mean) <= 1e-12;
  return {in_band && worst_dense <= 1e-8 && reverts,
          "train |mean-y|/sqrt(noise) max " + fmt_num(worst_train) + ", dense-solve diff " + fmt_num(worst_dense) +
              ", far field reverts " + (reverts ? "yes" : "no")};
}

Outcome ehvi_consistency() {
  Rng rng(10000);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Objective> pts(30);
  for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
  std::vector<Objective> front;
  for (auto i : pareto_front(pts)) front.push_back(pts[i]);
  const Objective r{1.1, 1.1, 1.1};
  bool exact = true, zero = true;
  for (int k = 0; k < 500; ++k) {
    Objective m{1.1 * u(rng), 1.1 * u(rng), 1.1 * u(rng)};
    double e = ehvi_mc(m, {0, 0, 0}, front, r, 64, rng).value;
    exact &= e == hvi_point(m, front, r);
    bool dominated = false;
    for (const auto& f : front) dominated |= weakly_dominates(f, m);
    if (dominated) zero &= e == 0.0;
  }
  for (const auto& f : front) zero &= ehvi_mc(f, {0, 0, 0}, front, r, 64, rng).value == 0.0;
  return {exact && zero, std::string("zero-variance EHVI == HVI: ") + (exact ? "yes" : "no") +
                             ", dominated score 0: " + (zero ? "yes" : "no")};
}

struct PairedRun {
  double inverse = 0.0;
  double mobo = 0.0;
  fs::path dir;
};
std::vector<PairedRun> g_paired;

Outcome paired_comparison(const fs::path& work) {
  auto base = ExperimentConfig::load(fs::path(INVDSE_SOURCE_DIR) / "configs" / "scaled.json");
  int wins = 0;
  double sum_d = 0.0, sum_m = 0.0;
  std::string d;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto cfg = base;
    cfg.seed = seed;
    cfg.output_dir = (work / "paired" / ("seed" + std::to_string(seed))).string();
    fs::remove_all(cfg.output_dir);
    Experiment e(cfg);
    auto s = e.run_all();
    PairedRun p;
    p.dir = cfg.output_dir;
    for (const auto& m : s.methods) (m.method == "inverse" ? p.inverse : p.mobo) = m.final_hvi;
    g_paired.push_back(p);
    wins += p.inverse >= p.mobo;
    sum_d += p.inverse;
    sum_m += p.mobo;
    d += " " + fmt_num(p.inverse) + "/" + fmt_num(p.mobo);
    std::printf("  [11] seed %llu: inverse HVI %.6g, mobo HVI %.6g\n", static_cast<unsigned long long>(seed), p.inverse,
                p.mobo);
    std::fflush(stdout);
  }
  return {wins >= 7 && sum_d > sum_m, "wins " + std::to_string(wins) + "/10, mean HVI " + fmt_num(sum_d / 10) + " vs " +
                                          fmt_num(sum_m / 10) + "; per seed" + d};
}

Outcome budget_and_replay(const fs::path& work) {
  auto cfg = ExperimentConfig::load(fs::path(INVDSE_SOURCE_DIR) / "configs" / "smoke.json");
  cfg.output_dir = (work / "replay_a").string();
  fs::remove_all(cfg.output_dir);
  Experiment a(cfg);
  a.run_all();
  auto replay = config_from_manifest(a.path("manifest.json"));
  replay.output_dir = (work / "replay_b").string();
  fs::remove_all(replay.output_dir);
  Experiment b(replay);
  b.run_all();
  bool identical = true;
  for (const char* f : {"inverse_records.csv", "mobo_records.csv"})
    identical &= slurp(a.path(f)) == slurp(b.path(f)) && !slurp(a.path(f)).empty();

  // Every run must spend exactly its budget: the smoke run plus any paired runs.
  bool exact = true;
  std::size_t runs = 0;
  auto check_dir = [&](const fs::path& dir, std::size_t budget) {
    for (const char* f : {"inverse_records.csv", "mobo_records.csv"}) {
      exact &= read_run_records(dir / f, S()).size() == budget;
      ++runs;
    }
    for (const char* f : {"inverse_stats.json", "mobo_stats.json"}) {
      exact &= nlohmann::json::parse(slurp(dir / f)).at("evaluations").get<std::size_t>() == budget;
    }
  };
  check_dir(cfg.output_dir, cfg.online.budget);
  for (const auto& p : g_paired) check_dir(p.dir, 64);
  return {identical && exact, std::string("replayed records identical: ") + (identical ? "yes" : "no") +
                                  ", oracle calls equal budget in " + std::to_string(runs) + " runs: " +
                                  (exact ? "yes" : "no")};
}

Outcome validity_suite(const fs::path& work) {
  Rng rng(13000);
  std::size_t failures = 0;
  for (int k = 0; k < 10000; ++k) {
    // Unconstrained draw, then legalize.
    std::vector<std::uint8_t> raw;
    for (const auto& p : S().params()) {
      std::uniform_int_distribution<int> u(0, static_cast<int>(p.candidates.size()) - 1);
      raw.push_back(static_cast<std::uint8_t>(u(rng)));
    }
    Configuration c(S(), raw);
    auto l = S().legalize(c);
    failures += !(S().legalize(l) == l) + !S().is_valid(l);
    if (S().is_valid(c)) failures += !(l == c);
    // Encode/decode both ways.
    failures += !(S().decode(S().to_signed(c)) == c);
    failures += !(S().decode(S().encode(c).to_signed()) == c);
    auto rc = S().random_config(rng);
    failures += !S().is_valid(rc);
    failures += !S().is_valid(S().mutate(rc, 0.2, rng));
    // Arbitrary real tensors decode to something legalizable.
    Tensor2D noise = S().to_signed(rc);
    std::normal_distribution<double> g;
    for (auto& v : noise.data) v = g(rng);
    failures += !S().is_valid(S().legalize(S().decode(noise)));
  }
  // Everything that reached the oracle in the end-to-end runs.
  std::size_t audited = 0;
  std::vector<fs::path> dirs{work / "replay_a", work / "replay_b"};
  for (const auto& p : g_paired) dirs.push_back(p.dir);
  for (const auto& dir : dirs) {
    for (const char* f : {"inverse_records.csv", "mobo_records.csv", "labeled.csv"}) {
      if (!fs::exists(dir / f)) continue;
      if (std::string(f) == "labeled.csv") {
        for (const auto& l : read_labels_csv(dir / f, S())) failures += !S().is_valid(l.config), ++audited;
      } else {
        for (const auto& r : read_run_records(dir / f, S())) failures += !S().is_valid(r.config), ++audited;
      }
    }
    if (fs::exists(dir / "augmented.csv"))
      for (const auto& c : read_configs_csv(dir / "augmented.csv", S())) failures += !S().is_valid(c), ++audited;
  }
  return {failures == 0, "10000 fuzz configs, " + std::to_string(audited) + " audited run configs, " +
                             std::to_string(failures) + " failures"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir = (fs::temp_directory_path() / "invdse_acceptance").string();
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory for end-to-end runs");
  app.add_option("--only", only, "run only these criterion numbers");
  CLI11_PARSE(app, argc, argv);
  const fs::path work(workdir);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"golden PPA values", golden_values},
      {"hypervolume exactness", hypervolume_exactness},
      {"Pareto-front brute-force equivalence", front_equivalence},
      {"gradient fidelity", gradient_fidelity},
      {"x0 inversion", x0_inversion},
      {"diffusion distribution capture", distribution_capture},
      {"guidance efficacy", guidance_efficacy},
      {"guidance linearity and s(t) schedule", linearity_and_schedule},
      {"GP correctness", gp_correctness},
      {"EHVI degenerate consistency", ehvi_consistency},
      {"paired end-to-end comparison", [&] { return paired_comparison(work); }},
      {"budget and reproducibility", [&] { return budget_and_replay(work); }},
      {"legalization and validity", [&] { return validity_suite(work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("%s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}

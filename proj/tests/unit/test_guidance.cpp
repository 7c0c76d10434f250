#include <doctest/doctest.h>

#include <cmath>

#include "invdse/guidance.hpp"
#include "invdse/oracle.hpp"
#include "support.hpp"

using namespace invdse;

namespace {

const DesignSpace& S() { return DesignSpace::accelerator(); }

std::vector<LabeledBitmap> labeled_set(std::size_t n, std::uint64_t seed) {
  SyntheticOracle oracle(S(), {.seed = 7});
  Rng rng(seed);
  std::vector<LabeledBitmap> out;
  for (std::size_t k = 0; k < n; ++k) {
    auto c = S().random_config(rng);
    out.push_back({S().encode(c), oracle.evaluate(c)});
  }
  return out;
}

PredictorTrainConfig small_cfg(int epochs) {
  PredictorTrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.net = {32, 2, nn::Activation::tanh};
  return cfg;
}

DenoiserModel small_denoiser(std::uint64_t seed, nn::Activation a = nn::Activation::tanh) {
  Rng rng(seed);
  DenoiserHyper h;
  h.hidden = 32;
  h.blocks = 2;
  h.embed_dim = 16;
  h.activation = a;
  return DenoiserModel::create(16, 7, NoiseSchedule::make(1000), h, rng);
}

// The composite x_t -> L evaluated without any guidance code.
double composite_loss(const DenoiserModel& m, const QoRPredictor& p, const Eigen::VectorXd& x_t, int t,
                      const Objective& target, const Objective& w) {
  double a = m.schedule.alpha_at(t);
  Eigen::VectorXd eps = m.predict_noise(x_t, t).col(0);
  Eigen::VectorXd x0 = (x_t - std::sqrt(1 - a) * eps) / std::sqrt(a);
  Eigen::MatrixXd y = p.predict_batch(x0);
  double l = 0.0;
  for (int k = 0; k < 3; ++k) l += w[static_cast<std::size_t>(k)] * (y(k, 0) - target[static_cast<std::size_t>(k)]) * (y(k, 0) - target[static_cast<std::size_t>(k)]);
  return l;
}

Eigen::VectorXd gaussian(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> g;
  Eigen::VectorXd v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST_CASE("train_predictor") {
  SUBCASE("constant labels are fitted") {
    auto data = labeled_set(64, 400);
    QoRVector q{1.0, 2.0, 3.0};
    for (auto& d : data) d.qor = q;
    ObjectiveBounds b{{-2.0, 1.0, 2.0}, {0.0, 3.0, 4.0}};
    Rng rng(401);
    auto p = train_predictor(data, small_cfg(300), rng, &b);
    auto target = normalize(q, b);
    double loss = 0.0;
    for (const auto& d : data) {
      auto y = p.predict(d.bits.to_signed());
      for (std::size_t k = 0; k < 3; ++k) loss += (y[k] - target[k]) * (y[k] - target[k]);
    }
    CHECK(loss / (3.0 * static_cast<double>(data.size())) < 1e-3);
  }
  SUBCASE("default net reaches the holdout error bound on 1000 synthetic labels") {
    auto data = labeled_set(1000, 402);
    PredictorTrainConfig cfg;  // 256 wide, 3 blocks, relu, 200 epochs
    cfg.holdout_fraction = 0.1;
    Rng rng(403);
    auto p = train_predictor(data, cfg, rng);
    MESSAGE("holdout RMSE " << p.holdout_rmse);
    CHECK(p.holdout_rmse >= 0.0);
    CHECK(p.holdout_rmse < 0.15);
  }
  SUBCASE("fixed seed gives identical parameters") {
    auto data = labeled_set(100, 404);
    Rng a(405), b(405);
    CHECK(train_predictor(data, small_cfg(5), a).params.values() ==
          train_predictor(data, small_cfg(5), b).params.values());
  }
  SUBCASE("too few or degenerate points are rejected") {
    auto data = labeled_set(2, 406);
    Rng rng(407);
    CHECK_THROWS_AS(train_predictor(std::span(data).first(1), small_cfg(1), rng), ConfigError);
    data[1].qor = data[0].qor;
    CHECK_THROWS_AS(train_predictor(data, small_cfg(1), rng), ConfigError);
  }
  SUBCASE("checkpoint reload reproduces predictions") {
    auto dir = test::scratch_dir("predictor");
    auto data = labeled_set(50, 408);
    Rng rng(409);
    auto p = train_predictor(data, small_cfg(3), rng);
    p.save(dir / "p.json");
    auto back = QoRPredictor::load(dir / "p.json");
    for (const auto& d : data) CHECK(back.predict(d.bits.to_signed()) == p.predict(d.bits.to_signed()));
    CHECK(back.bounds.lo == p.bounds.lo);
    CHECK(back.bounds.hi == p.bounds.hi);
  }
}

TEST_CASE("guidance_loss") {
  Objective w{1, 1, 1};
  CHECK(guidance_loss({0.3, 0.2, 0.1}, {0.3, 0.2, 0.1}, w) == 0.0);
  CHECK(guidance_loss({1.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, w) == 1.0);
  Rng rng(410);
  std::uniform_real_distribution<double> u(-1, 1), pw(0.1, 3);
  for (int k = 0; k < 50; ++k) {
    Objective a{u(rng), u(rng), u(rng)}, b{u(rng), u(rng), u(rng)}, ww{pw(rng), pw(rng), pw(rng)};
    double ref = 0.0;
    for (std::size_t i = 0; i < 3; ++i) ref += ww[i] * (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(guidance_loss(a, b, ww) == doctest::Approx(ref).epsilon(1e-14));
    CHECK(guidance_loss(a, b, ww) >= 0.0);
  }
}

TEST_CASE("guided_noise") {
  auto data = labeled_set(200, 420);
  Rng prng(421);
  auto predictor = train_predictor(data, small_cfg(20), prng);
  auto model = small_denoiser(422);
  Rng rng(423);
  const Objective target{0.2, 0.3, 0.1};

  SUBCASE("flat predictor leaves the noise unchanged") {
    auto flat = predictor;
    // Zero the last dense layer's weights and bias: the output is constant.
    auto& v = flat.params.mutable_values();
    for (Eigen::Index k = static_cast<Eigen::Index>(flat.params.offset(flat.spec.layers.size() - 1)); k < v.size(); ++k)
      v[k] = 0.0;
    Eigen::MatrixXd x = gaussian(rng, 112);
    auto g = guided_noise(model, flat, x, 500, {0, 0, 0}, {});
    CHECK(g.refined == g.eps);
    CHECK(g.gradient_norm[0] == 0.0);
  }
  SUBCASE("c = 0 returns the raw noise exactly") {
    Eigen::MatrixXd x = gaussian(rng, 112);
    GuidanceConfig cfg;
    cfg.strength = 0.0;
    auto g = guided_noise(model, predictor, x, 700, target, cfg);
    CHECK(g.refined == model.predict_noise(x, 700));
  }
  SUBCASE("full-chain gradient matches central differences") {
    const double h = 1e-5;
    for (auto frozen : {false, true}) {
      for (int t : {20, 300, 900}) {
        Eigen::VectorXd x = gaussian(rng, 112);
        GuidanceConfig cfg;
        cfg.weights = {1.0, 0.5, 2.0};
        cfg.frozen_eps = frozen;
        auto g = guidance_gradient(model, predictor, x, t, target, cfg);
        CHECK(g.loss[0] == doctest::Approx(composite_loss(model, predictor, x, t, target, cfg.weights)).epsilon(1e-12));
        if (frozen) continue;  // frozen-eps is an approximation by design
        double worst = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
          Eigen::VectorXd xp = x, xm = x;
          xp[i] += h;
          xm[i] -= h;
          double fd = (composite_loss(model, predictor, xp, t, target, cfg.weights) -
                       composite_loss(model, predictor, xm, t, target, cfg.weights)) /
                      (2 * h);
          worst = std::max(worst, test::rel_err(g.gradient(i, 0), fd));
        }
        CAPTURE(t);
        CHECK(worst <= 1e-3);
      }
    }
  }
  SUBCASE("frozen-eps gradient is the predictor gradient divided by sqrt(alpha)") {
    Eigen::VectorXd x = gaussian(rng, 112);
    GuidanceConfig cfg;
    cfg.frozen_eps = true;
    auto g = guidance_gradient(model, predictor, x, 400, target, cfg);
    // Differentiate y -> L(f(y)) at the unclamped x0 by central differences.
    const double h = 1e-5, sa = std::sqrt(model.schedule.alpha_at(400));
    Eigen::VectorXd x0 = g.x0.col(0);
    auto lf = [&](const Eigen::VectorXd& y) {
      Eigen::MatrixXd o = predictor.predict_batch(y);
      return guidance_loss({o(0, 0), o(1, 0), o(2, 0)}, target, cfg.weights);
    };
    for (Eigen::Index i = 0; i < 112; i += 7) {
      Eigen::VectorXd p = x0, m = x0;
      p[i] += h;
      m[i] -= h;
      CHECK(test::rel_err(g.gradient(i, 0), (lf(p) - lf(m)) / (2 * h) / sa) <= 1e-3);
    }
  }
  SUBCASE("refined noise is linear in c") {
    Eigen::MatrixXd x(112, 3);
    for (int b = 0; b < 3; ++b) x.col(b) = gaussian(rng, 112);
    GuidanceConfig c0, c1, c2;
    c0.strength = 0;
    c1.strength = 1;
    c2.strength = 2;
    auto g0 = guided_noise(model, predictor, x, 650, target, c0);
    auto g1 = guided_noise(model, predictor, x, 650, target, c1);
    auto g2 = guided_noise(model, predictor, x, 650, target, c2);
    CHECK(g0.refined == g0.eps);
    Eigen::MatrixXd corr = g1.refined - g0.refined;
    CHECK(corr.norm() > 0.0);
    CHECK((g2.refined - g0.refined - 2.0 * corr).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + corr.cwiseAbs().maxCoeff()));
  }
  SUBCASE("s(t) = 1000 sqrt(1 - alpha_t) increases with t") {
    for (int t = 1; t < 1000; ++t) {
      CHECK(model.schedule.guidance_scale(t, 1000) < model.schedule.guidance_scale(t + 1, 1000));
    }
    CHECK(model.schedule.guidance_scale(250, 1000) == doctest::Approx(1000 * std::sqrt(1 - model.schedule.alpha_at(250))));
  }
  SUBCASE("a weak guided step lowers the loss at the x0 estimate") {
    // The refined noise moves x0 by d = -(sqrt(1 - a) / sqrt(a)) (refined - eps). With frozen eps, d
    // points along -grad_x0 L. The exact chain gives d along -J^T grad_x0 L with J = dx0/dx_t, which
    // descends only while grad . d < 0, so the measured change is also held to its first-order value.
    // A briefly trained denoiser keeps x0 estimates in the predictor's working range at every t.
    auto model = small_denoiser(424);
    std::vector<SignedTensor> pool;
    for (const auto& d : data) pool.push_back(d.bits.to_signed());
    DenoiserTrainConfig tc;
    tc.steps = 1500;
    tc.batch_size = 32;
    Rng trng(425);
    train_denoiser(model, pool, tc, trng);
    for (auto frozen : {false, true}) {
      for (int t : {50, 200, 500, 800, 1000}) {
        Eigen::MatrixXd x = gaussian(rng, 112);
        const double a = model.schedule.alpha_at(t);
        GuidanceConfig cfg;
        cfg.strength = 1.0;
        cfg.frozen_eps = frozen;
        auto unit = guided_noise(model, predictor, x, t, target, cfg);
        Eigen::VectorXd d_unit = -(std::sqrt(1 - a) / std::sqrt(a)) * (unit.refined - unit.eps).col(0);
        REQUIRE(d_unit.norm() > 0.0);
        GuidanceConfig fz = cfg;
        fz.frozen_eps = true;
        Eigen::VectorXd grad_x0 = guidance_gradient(model, predictor, x, t, target, fz).gradient.col(0) * std::sqrt(a);

        cfg.strength = 1e-4 / d_unit.norm();  // x0 moves by 1e-4 in norm
        auto g = guided_noise(model, predictor, x, t, target, cfg);
        Eigen::MatrixXd x0_guided = (x - std::sqrt(1 - a) * g.refined) / std::sqrt(a);
        Eigen::MatrixXd y = predictor.predict_batch(x0_guided);
        const double change = guidance_loss({y(0, 0), y(1, 0), y(2, 0)}, target, cfg.weights) - g.loss[0];
        const double predicted = cfg.strength * grad_x0.dot(d_unit);
        CAPTURE(t);
        CAPTURE(frozen);
        CHECK(std::abs(change - predicted) <= 0.05 * std::abs(predicted));
        CHECK(change < 0.0);
      }
    }
  }
  SUBCASE("non-finite gradients fall back to the raw noise") {
    auto broken = predictor;
    broken.params.mutable_values()[0] = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd x = gaussian(rng, 112);
    auto g = guided_noise(model, broken, x, 500, target, {});
    CHECK(g.fallback[0]);
    CHECK(g.refined == g.eps);
    TargetGuidance hook(model, broken, target, {});
    Rng srng(424);
    ddim_sample(model, SamplerConfig::uniform(model.schedule, 10), srng, &hook);
    CHECK(hook.events().size() == 10);
    CHECK(hook.fallback_count() == 10);
  }
  SUBCASE("negative strength or weights are rejected") {
    GuidanceConfig cfg;
    cfg.strength = -1;
    CHECK_THROWS_AS(cfg.check(), ConfigError);
    cfg.strength = 1;
    cfg.weights = {1, 0, 1};
    CHECK_THROWS_AS(cfg.check(), ConfigError);
  }
}

TEST_CASE("guidance log") {
  auto dir = test::scratch_dir("guidance_log");
  write_guidance_log(dir / "g.csv", {{0, 1000, 0.5, 2.0, 0}, {1, 980, 0.25, 1.0, 1}});
  auto text = test::slurp(dir / "g.csv");
  CHECK(text.rfind("step,t,loss,gradient_norm,fallbacks\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("retrain") {
  auto data = labeled_set(120, 430);
  Rng rng(431);
  auto p = train_predictor(data, small_cfg(10), rng);

  SUBCASE("an empty new set leaves the predictor unchanged") {
    Rng r(432);
    auto q = retrain(p, data, {}, 50, 32, r);
    CHECK(q.params.values() == p.params.values());
    CHECK(q.optimizer.step == p.optimizer.step);
  }
  SUBCASE("bounds stay frozen and the optimizer warm-starts") {
    auto fresh = labeled_set(8, 433);
    Rng r(434);
    auto q = retrain(p, data, fresh, 2, 32, r);
    CHECK(q.bounds.lo == p.bounds.lo);
    CHECK(q.bounds.hi == p.bounds.hi);
    CHECK(q.optimizer.step == p.optimizer.step + 2 * 4);  // 128 points, batch 32
  }
  SUBCASE("deterministic under a fixed seed") {
    auto fresh = labeled_set(8, 435);
    Rng a(436), b(436);
    CHECK(retrain(p, data, fresh, 3, 32, a).params.values() == retrain(p, data, fresh, 3, 32, b).params.values());
  }
  SUBCASE("points from an unexplored region reduce error there") {
    // Region: the largest arrays (both mesh dimensions at 16 with 16-wide tiles).
    SyntheticOracle oracle(S(), {.seed = 7});
    const auto tr = S().require_index("tile_row"), mr = S().require_index("mesh_row");
    auto in_region = [&](const Configuration& c) { return c[tr] == 4 && c[mr] == 4; };
    Rng g(437);
    std::vector<LabeledBitmap> base, fresh, probe;
    std::vector<QoRVector> base_q;
    while (base.size() < 300 || fresh.size() < 32 || probe.size() < 100) {
      auto c = S().random_config(g);
      if (!in_region(c)) {
        if (base.size() < 300) base.push_back({S().encode(c), oracle.evaluate(c)});
        continue;
      }
      auto q = oracle.evaluate(c);
      if (fresh.size() < 32) fresh.push_back({S().encode(c), q});
      else if (probe.size() < 100) probe.push_back({S().encode(c), q});
    }
    // Bounds cover both regions so the probe error is measured on one scale.
    std::vector<QoRVector> all_q;
    for (const auto* set : {&base, &fresh, &probe}) {
      for (const auto& l : *set) all_q.push_back(l.qor);
    }
    auto bounds = ObjectiveBounds::from(all_q);
    Rng r(438);
    auto before = train_predictor(base, small_cfg(100), r, &bounds);
    auto after = retrain(before, base, fresh, 50, 32, r);
    double e0 = predictor_rmse(before, probe), e1 = predictor_rmse(after, probe);
    MESSAGE("probe RMSE " << e0 << " -> " << e1);
    CHECK(e1 < e0);
  }
}

#include <benchmark/benchmark.h>

#include <random>
#include <set>

#include "invdse/guidance.hpp"
#include "invdse/mobo.hpp"

using namespace invdse;

namespace {

const DesignSpace& S() { return DesignSpace::accelerator(); }

std::vector<Objective> random_front(std::size_t n, Rng& rng) {
  // Points on the simplex x + y + z = 1 are mutually non-dominated.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Objective> pts;
  while (pts.size() < n) {
    double a = u(rng), b = u(rng);
    if (a + b > 1.0) continue;
    pts.push_back({a, b, 1.0 - a - b});
  }
  return pts;
}

void BM_Hypervolume(benchmark::State& state) {
  Rng rng(1);
  auto pts = random_front(static_cast<std::size_t>(state.range(0)), rng);
  const Objective ref{1.1, 1.1, 1.1};
  for (auto _ : state) benchmark::DoNotOptimize(hypervolume(pts, ref));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Hypervolume)->RangeMultiplier(4)->Range(16, 1024)->Complexity();

void BM_EhviMc(benchmark::State& state) {
  Rng rng(2);
  auto front = random_front(64, rng);
  const Objective ref{1.1, 1.1, 1.1};
  for (auto _ : state) {
    benchmark::DoNotOptimize(ehvi_mc({0.3, 0.3, 0.3}, {0.1, 0.1, 0.1}, front, ref, static_cast<std::size_t>(state.range(0)), rng));
  }
}
BENCHMARK(BM_EhviMc)->Arg(32)->Arg(128);

void BM_DenoiserForwardBackward(benchmark::State& state) {
  Rng rng(3);
  DenoiserHyper h;
  auto model = DenoiserModel::create(16, 7, NoiseSchedule::make(1000), h, rng);
  const Eigen::Index batch = state.range(0);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(112, batch);
  Eigen::MatrixXd upstream = Eigen::MatrixXd::Ones(112, batch);
  for (auto _ : state) {
    auto f = model.predict_noise_taped(x, 500);
    benchmark::DoNotOptimize(nn::backward(model.params, model.spec, f.tape, upstream));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_DenoiserForwardBackward)->Arg(1)->Arg(128);

void BM_GuidedNoise(benchmark::State& state) {
  Rng rng(4);
  auto model = DenoiserModel::create(16, 7, NoiseSchedule::make(1000), DenoiserHyper{}, rng);
  QoRPredictor predictor;
  predictor.spec = nn::NetSpec::residual_mlp(112, 3, 256, 3, nn::Activation::relu);
  predictor.params = nn::NetParams::init(predictor.spec, rng);
  predictor.bounds = {{-1.0, 0.0, 0.0}, {0.0, 1.0, 1.0}};
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(112, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(guided_noise(model, predictor, x, 500, {0.2, 0.2, 0.2}, GuidanceConfig{}));
  }
}
BENCHMARK(BM_GuidedNoise);

void BM_GpFit(benchmark::State& state) {
  Rng rng(5);
  std::vector<Configuration> cs;
  std::set<Configuration> seen;
  while (cs.size() < static_cast<std::size_t>(state.range(0))) {
    auto c = S().random_config(rng);
    if (seen.insert(c).second) cs.push_back(c);
  }
  auto x = encode_inputs(S(), cs);
  std::normal_distribution<double> g;
  Eigen::VectorXd y(x.cols());
  for (auto& v : y) v = g(rng);
  GPFitOptions fixed;
  fixed.hyper_opt = false;
  for (auto _ : state) benchmark::DoNotOptimize(gp_fit(x, y, fixed));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_GpFit)->RangeMultiplier(2)->Range(64, 512)->Complexity();

void BM_ScorePool(benchmark::State& state) {
  Rng rng(6);
  SyntheticOracle oracle(S(), {.seed = 7});
  std::vector<Configuration> cs;
  std::vector<QoRVector> qs;
  std::set<Configuration> seen;
  while (cs.size() < 200) {
    auto c = S().random_config(rng);
    if (!seen.insert(c).second) continue;
    cs.push_back(c);
    qs.push_back(oracle.evaluate(c));
  }
  MoboConfig cfg;
  cfg.hyper_opt = false;
  MoboState mobo(S(), ParetoArchive::seeded(cs, qs), cfg);
  auto pool = mobo.draw_pool(static_cast<std::size_t>(state.range(0)), rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_pool(mobo.models(), S(), pool, mobo.archive(), 128, 7));
  }
}
BENCHMARK(BM_ScorePool)->Arg(256);

}  // namespace

BENCHMARK_MAIN();

// Command-line front end: one verb per experiment phase, one JSON config per run.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "invdse/errors.hpp"
#include "invdse/harness.hpp"

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kOracle = 3, kDivergence = 4 };

struct Options {
  std::string config;
  std::string manifest;
  std::optional<std::string> output;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> oracle_seed;
  std::optional<std::size_t> budget;
  std::vector<std::string> sets;
};

invdse::ExperimentConfig resolve(const Options& o) {
  if (o.config.empty() == o.manifest.empty()) throw invdse::ConfigError("give exactly one of --config or --manifest");
  auto cfg = o.manifest.empty() ? invdse::ExperimentConfig::load(o.config) : invdse::config_from_manifest(o.manifest);
  if (o.output) cfg.output_dir = *o.output;
  if (o.seed) cfg.seed = *o.seed;
  if (o.oracle_seed) cfg.oracle.seed = *o.oracle_seed;
  if (o.budget) cfg.online.budget = *o.budget;
  for (const auto& kv : o.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw invdse::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void print_run(const invdse::RunResult& r) {
  double hvi = r.records.empty() ? 0.0 : r.records.back().hvi;
  fmt::print("{}: {} evaluations, final HVI {:.6g}, error rate {:.4f}\n", r.method, r.stats.evaluations, hvi,
             r.stats.error_rate());
}

void print_report(const invdse::ReportSummary& s) {
  fmt::print("offline hypervolume {:.6g}\n", s.offline_hypervolume);
  for (const auto& m : s.methods) {
    fmt::print("{:8} HV {:.6g}  HVI {:.6g}  evaluations {}  error rate {:.4f}\n", m.method, m.final_hypervolume,
               m.final_hvi, m.evaluations, m.error_rate);
    if (!m.best.empty()) {
      const auto& b = m.best.front();
      fmt::print("         best PPA trade-off {:.4g} (perf {:.4g}, power {:.4g}, area {:.4g})\n", b.tradeoff,
                 b.qor.performance, b.qor.power, b.qor.area);
    }
  }
}

int run(const std::string& verb, const Options& o) {
  invdse::Experiment exp(resolve(o));
  const auto& cfg = exp.config();
  if (verb == "prepare") {
    auto d = exp.prepare();
    fmt::print("prepared {} unlabeled, {} labeled, {} augmented in {}\n", d.unlabeled.size(), d.labeled.size(),
               d.augmented.size(), cfg.output_dir);
  } else if (verb == "offline") {
    auto off = exp.offline(exp.load_data());
    fmt::print("offline: front {} points, hypervolume {:.6g}, predictor holdout RMSE {:.4f}\n",
               off.archive.front().size(), off.offline_hypervolume, off.predictor.holdout_rmse);
  } else if (verb == "online") {
    auto data = exp.load_data();
    print_run(exp.online(exp.load_offline(data)));
  } else if (verb == "mobo") {
    auto data = exp.load_data();
    print_run(exp.mobo(exp.load_offline(data)));
  } else if (verb == "report") {
    print_report(exp.report());
  } else {
    print_report(exp.run_all());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inverse design-space exploration with guided diffusion"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string(INVDSE_CLI_VERSION));
  Options o;
  const std::vector<std::pair<const char*, const char*>> verbs{
      {"prepare", "sample the unlabeled pool, label a subset and build the augmented set"},
      {"offline", "train the denoiser and the QoR predictor, seed the Pareto archive"},
      {"online", "run the guided exploration loop against the oracle budget"},
      {"mobo", "run the Bayesian-optimization baseline on the same seed data"},
      {"report", "write comparison CSVs, Pareto plots and summary.json"},
      {"all", "prepare, offline, online, mobo and report in sequence"},
  };
  for (const auto& [name, help] : verbs) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("-m,--manifest", o.manifest, "replay the config recorded in a run manifest")
        ->check(CLI::ExistingFile);
    sub->add_option("-o,--output", o.output, "output directory");
    sub->add_option("--seed", o.seed, "global seed");
    sub->add_option("--oracle-seed", o.oracle_seed, "synthetic oracle seed");
    sub->add_option("--budget", o.budget, "online oracle budget");
    sub->add_option("--set", o.sets, "override any field, e.g. --set diffusion.sampler_steps=20");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    return run(verb, o);
  } catch (const invdse::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kConfig;
  } catch (const invdse::ParseError& e) {
    fmt::print(stderr, "input error: {}\n", e.what());
    return kConfig;
  } catch (const invdse::OracleError& e) {
    fmt::print(stderr, "oracle error: {}\n", e.what());
    return kOracle;
  } catch (const invdse::DivergenceError& e) {
    fmt::print(stderr, "training diverged at step {}: {}\n", e.step(), e.what());
    return kDivergence;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kFailure;
  }
}

#include "invdse/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "invdse/csv.hpp"
#include "invdse/seeds.hpp"
#include "json_io.hpp"

namespace invdse {

using nlohmann::json;

namespace {

// Reads fields out of one JSON object and rejects whatever is left over.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("");
      }
      out = it->get<T>();
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("{}.{} has the wrong type", path_, key));
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(fmt::format("unknown key '{}.{}'", path_, it.key()));
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
void section(StrictObject& parent, const char* key, const std::string& path, F&& fill) {
  if (const json* j = parent.child(key)) {
    StrictObject o(*j, path);
    fill(o);
    o.finish();
  }
}

json config_to_json(const ExperimentConfig& c) {
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"design_space", c.design_space},
      {"oracle", {{"kind", c.oracle.kind}, {"seed", c.oracle.seed}, {"noise", c.oracle.noise}, {"table", c.oracle.table}}},
      {"data",
       {{"unlabeled", c.data.unlabeled},
        {"labeled", c.data.labeled},
        {"augment_multiplier", c.data.augment_multiplier},
        {"mutation_rate", c.data.mutation_rate}}},
      {"diffusion",
       {{"timesteps", c.diffusion.timesteps},
        {"beta_start", c.diffusion.beta_start},
        {"beta_end", c.diffusion.beta_end},
        {"sampler_steps", c.diffusion.sampler_steps},
        {"clamp_x0", c.diffusion.clamp_x0},
        {"hidden", c.diffusion.hidden},
        {"blocks", c.diffusion.blocks},
        {"embed_dim", c.diffusion.embed_dim},
        {"activation", c.diffusion.activation},
        {"train_steps", c.diffusion.train_steps},
        {"batch_size", c.diffusion.batch_size},
        {"learning_rate", c.diffusion.learning_rate}}},
      {"predictor",
       {{"hidden", c.predictor.hidden},
        {"blocks", c.predictor.blocks},
        {"activation", c.predictor.activation},
        {"epochs", c.predictor.epochs},
        {"batch_size", c.predictor.batch_size},
        {"learning_rate", c.predictor.learning_rate},
        {"holdout_fraction", c.predictor.holdout_fraction},
        {"retrain_epochs", c.predictor.retrain_epochs}}},
      {"guidance",
       {{"strength", c.guidance.strength}, {"weights", c.guidance.weights}, {"frozen_eps", c.guidance.frozen_eps}}},
      {"online",
       {{"budget", c.online.budget},
        {"batch_size", c.online.batch_size},
        {"step_size", c.online.step_size},
        {"candidates_per_point", c.online.candidates_per_point},
        {"max_resamples", c.online.max_resamples},
        {"reference_margin", c.online.reference_margin}}},
      {"mobo",
       {{"pool_size", c.mobo.pool_size},
        {"ehvi_samples", c.mobo.ehvi_samples},
        {"refit_every", c.mobo.refit_every},
        {"hyper_opt", c.mobo.hyper_opt},
        {"center_targets", c.mobo.center_targets}}},
  };
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  StrictObject root(j, "");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.get("design_space", c.design_space);
  section(root, "oracle", "oracle", [&](StrictObject& o) {
    o.get("kind", c.oracle.kind);
    o.get("seed", c.oracle.seed);
    o.get("noise", c.oracle.noise);
    o.get("table", c.oracle.table);
  });
  section(root, "data", "data", [&](StrictObject& o) {
    o.get("unlabeled", c.data.unlabeled);
    o.get("labeled", c.data.labeled);
    o.get("augment_multiplier", c.data.augment_multiplier);
    o.get("mutation_rate", c.data.mutation_rate);
  });
  section(root, "diffusion", "diffusion", [&](StrictObject& o) {
    auto& d = c.diffusion;
    o.get("timesteps", d.timesteps);
    o.get("beta_start", d.beta_start);
    o.get("beta_end", d.beta_end);
    o.get("sampler_steps", d.sampler_steps);
    o.get("clamp_x0", d.clamp_x0);
    o.get("hidden", d.hidden);
    o.get("blocks", d.blocks);
    o.get("embed_dim", d.embed_dim);
    o.get("activation", d.activation);
    o.get("train_steps", d.train_steps);
    o.get("batch_size", d.batch_size);
    o.get("learning_rate", d.learning_rate);
  });
  section(root, "predictor", "predictor", [&](StrictObject& o) {
    auto& p = c.predictor;
    o.get("hidden", p.hidden);
    o.get("blocks", p.blocks);
    o.get("activation", p.activation);
    o.get("epochs", p.epochs);
    o.get("batch_size", p.batch_size);
    o.get("learning_rate", p.learning_rate);
    o.get("holdout_fraction", p.holdout_fraction);
    o.get("retrain_epochs", p.retrain_epochs);
  });
  section(root, "guidance", "guidance", [&](StrictObject& o) {
    o.get("strength", c.guidance.strength);
    o.get("weights", c.guidance.weights);
    o.get("frozen_eps", c.guidance.frozen_eps);
  });
  section(root, "online", "online", [&](StrictObject& o) {
    auto& n = c.online;
    o.get("budget", n.budget);
    o.get("batch_size", n.batch_size);
    o.get("step_size", n.step_size);
    o.get("candidates_per_point", n.candidates_per_point);
    o.get("max_resamples", n.max_resamples);
    o.get("reference_margin", n.reference_margin);
  });
  section(root, "mobo", "mobo", [&](StrictObject& o) {
    auto& m = c.mobo;
    o.get("pool_size", m.pool_size);
    o.get("ehvi_samples", m.ehvi_samples);
    o.get("refit_every", m.refit_every);
    o.get("hyper_opt", m.hyper_opt);
    o.get("center_targets", m.center_targets);
  });
  root.finish();
  return c;
}

Objective guidance_weights(const ExperimentConfig& c) {
  return {c.guidance.weights[0], c.guidance.weights[1], c.guidance.weights[2]};
}

std::vector<LabeledBitmap> to_bitmaps(const DesignSpace& space, const std::vector<LabeledConfig>& labeled) {
  std::vector<LabeledBitmap> out;
  out.reserve(labeled.size());
  for (const auto& l : labeled) out.push_back({space.encode(l.config), l.qor});
  return out;
}

// Front configuration whose normalized objectives lie closest to y*.
const Configuration& nearest_front(const ParetoArchive& archive, const Objective& target) {
  std::size_t best = archive.front().front();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i : archive.front()) {
    double d = 0.0;
    for (std::size_t k = 0; k < kObjectives; ++k) {
      double diff = archive.records()[i].normalized[k] - target[k];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return archive.records()[best].config;
}

std::string obj_field(double v) { return csv::format_double(v); }

void write_stats(const std::filesystem::path& path, const RunStats& s) {
  json j = {{"generated", s.generated},
            {"pre_legal_invalid", s.pre_legal_invalid},
            {"error_rate", s.error_rate()},
            {"resamples", s.resamples},
            {"mutate_fallbacks", s.mutate_fallbacks},
            {"guidance_fallbacks", s.guidance_fallbacks},
            {"evaluations", s.evaluations},
            {"budget_exhausted", s.budget_exhausted}};
  detail::write_json_file(path, j);
}

void write_timings(const std::filesystem::path& path, const std::vector<RunRecord>& records,
                   const std::vector<double>& wall) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "iteration,wall_seconds\n";
  for (std::size_t i = 0; i < records.size() && i < wall.size(); ++i) {
    out << records[i].iteration << ',' << fmt::format("{:.6f}", wall[i]) << '\n';
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config is not valid JSON: ") + e.what());
  }
  auto c = config_from_json(j);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open experiment config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::to_json() const { return config_to_json(*this).dump(2); }

void ExperimentConfig::set(std::string_view dotted_key, std::string_view value) {
  json j = config_to_json(*this);
  json* node = &j;
  std::string key(dotted_key);
  std::size_t start = 0;
  while (true) {
    auto dot = key.find('.', start);
    std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json v;
  try {
    v = json::parse(value);
  } catch (const json::exception&) {
    v = std::string(value);
  }
  if (node->is_string() && !v.is_string()) v = std::string(value);
  *node = v;
  *this = config_from_json(j);
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (oracle.kind != "synthetic" && oracle.kind != "table") fail("oracle.kind must be 'synthetic' or 'table'");
  if (oracle.kind == "table" && oracle.table.empty()) fail("oracle.table is required for a table oracle");
  if (!(oracle.noise >= 0.0 && oracle.noise < 1.0)) fail("oracle.noise must lie in [0, 1)");
  if (output_dir.empty()) fail("output_dir must not be empty");
  if (data.labeled < 2) fail("data.labeled must be at least 2");
  if (data.labeled > data.unlabeled) fail("data.labeled must not exceed data.unlabeled");
  if (!(data.mutation_rate > 0.0 && data.mutation_rate <= 1.0)) fail("data.mutation_rate must lie in (0, 1]");
  if (diffusion.timesteps < 1) fail("diffusion.timesteps must be >= 1");
  if (diffusion.sampler_steps < 1 || diffusion.sampler_steps > diffusion.timesteps)
    fail("diffusion.sampler_steps must lie in [1, timesteps]");
  if (!(diffusion.beta_start > 0.0 && diffusion.beta_start <= diffusion.beta_end && diffusion.beta_end < 1.0))
    fail("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
  if (diffusion.hidden < 1 || diffusion.blocks < 0 || diffusion.embed_dim < 2 || diffusion.embed_dim % 2)
    fail("diffusion network sizes are invalid");
  if (diffusion.train_steps < 0 || diffusion.batch_size < 1) fail("diffusion training sizes are invalid");
  if (!(diffusion.learning_rate > 0.0)) fail("diffusion.learning_rate must be positive");
  nn::activation_from_string(diffusion.activation);
  if (predictor.hidden < 1 || predictor.blocks < 0) fail("predictor network sizes are invalid");
  nn::activation_from_string(predictor.activation);
  if (predictor.epochs < 0 || predictor.batch_size < 1 || predictor.retrain_epochs < 0)
    fail("predictor training sizes are invalid");
  if (!(predictor.learning_rate > 0.0)) fail("predictor.learning_rate must be positive");
  if (!(predictor.holdout_fraction >= 0.0 && predictor.holdout_fraction < 1.0))
    fail("predictor.holdout_fraction must lie in [0, 1)");
  if (guidance.weights.size() != kObjectives) fail("guidance.weights needs three entries");
  GuidanceConfig{guidance.strength, {guidance.weights[0], guidance.weights[1], guidance.weights[2]}, false}.check();
  if (online.batch_size < 1) fail("online.batch_size must be >= 1");
  if (!(online.step_size > 0.0)) fail("online.step_size must be positive");
  if (online.candidates_per_point < 0 || online.max_resamples < 0) fail("online sampling counts must be >= 0");
  if (!(online.reference_margin > 0.0)) fail("online.reference_margin must be positive");
  MoboConfig{mobo.pool_size, mobo.ehvi_samples, mobo.refit_every, mobo.hyper_opt, mobo.center_targets}.check();
}

SeedSet SeedSet::derive(std::uint64_t g) {
  return {derive_seed(g, "prepare"), derive_seed(g, "offline.denoiser"), derive_seed(g, "offline.predictor"),
          derive_seed(g, "online"),  derive_seed(g, "online.retrain"),  derive_seed(g, "mobo")};
}

std::map<std::string, std::uint64_t> SeedSet::named() const {
  return {{"prepare", prepare}, {"offline.denoiser", denoiser}, {"offline.predictor", predictor},
          {"online", online},   {"online.retrain", retrain},    {"mobo", mobo}};
}

std::vector<BestDesign> rank_by_tradeoff(const ParetoArchive& archive, std::size_t top) {
  std::vector<BestDesign> all;
  for (const auto& r : archive.records()) {
    all.push_back({r.config, r.qor, ppa_tradeoff(r.qor.performance, r.qor.power, r.qor.area), r.iteration});
  }
  std::stable_sort(all.begin(), all.end(), [](const BestDesign& a, const BestDesign& b) { return a.tradeoff > b.tradeoff; });
  if (all.size() > top) all.resize(top);
  return all;
}

// ---------------------------------------------------------------------------

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)), seeds_(SeedSet::derive(cfg_.seed)) {
  cfg_.validate();
  space_ = std::make_unique<DesignSpace>(cfg_.design_space.empty() ? DesignSpace::accelerator()
                                                                   : DesignSpace::load(cfg_.design_space));
  if (cfg_.oracle.kind == "synthetic") {
    SyntheticOracleParams p;
    p.seed = cfg_.oracle.seed;
    p.noise = cfg_.oracle.noise;
    oracle_ = std::make_shared<SyntheticOracle>(*space_, p);
  } else {
    oracle_ = std::make_shared<TableOracle>(TableOracle::load(cfg_.oracle.table, *space_));
  }
}

std::filesystem::path Experiment::path(const std::string& name) const {
  return std::filesystem::path(cfg_.output_dir) / name;
}

void Experiment::write_manifest() const {
  std::filesystem::create_directories(cfg_.output_dir);
  json seeds = json::object();
  for (const auto& [k, v] : seeds_.named()) seeds[k] = v;
  json j = {{"format", "invdse-manifest"},
            {"version", 1},
            {"code_version", INVDSE_VERSION},
            {"seeds", seeds},
            {"oracle", oracle_->name()},
            {"config", config_to_json(cfg_)}};
  detail::write_json_file(path("manifest.json"), j);
}

ExperimentConfig config_from_manifest(const std::filesystem::path& p) {
  json j;
  try {
    j = detail::read_json_file(p);
    detail::require_format(j, "invdse-manifest", 1);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  if (!j.contains("config")) throw ConfigError("manifest has no config");
  auto c = config_from_json(j.at("config"));
  c.validate();
  return c;
}

PreparedData Experiment::prepare() {
  std::filesystem::create_directories(cfg_.output_dir);
  write_manifest();
  Rng rng(seeds_.prepare);
  PreparedData d;
  d.unlabeled.reserve(cfg_.data.unlabeled);
  for (std::size_t i = 0; i < cfg_.data.unlabeled; ++i) d.unlabeled.push_back(space_->random_config(rng));

  // L distinct pool members receive labels; duplicates in the pool are skipped.
  std::vector<std::size_t> order(d.unlabeled.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::unordered_set<Configuration, ConfigurationHash> labeled_set;
  for (std::size_t i : order) {
    if (d.labeled.size() == cfg_.data.labeled) break;
    const auto& c = d.unlabeled[i];
    if (!labeled_set.insert(c).second) continue;
    d.labeled.push_back({c, oracle_->evaluate(c)});
  }
  if (d.labeled.size() < cfg_.data.labeled) throw ConfigError("unlabeled pool has too few distinct configurations");

  d.augmented.reserve(cfg_.data.unlabeled * cfg_.data.augment_multiplier);
  for (std::size_t m = 0; m < cfg_.data.augment_multiplier; ++m) {
    for (const auto& c : d.unlabeled) d.augmented.push_back(space_->mutate(c, cfg_.data.mutation_rate, rng));
  }
  write_configs_csv(path("unlabeled.csv"), *space_, d.unlabeled);
  write_labels_csv(path("labeled.csv"), *space_, d.labeled);
  write_configs_csv(path("augmented.csv"), *space_, d.augmented);
  return d;
}

PreparedData Experiment::load_data() const {
  PreparedData d;
  d.unlabeled = read_configs_csv(path("unlabeled.csv"), *space_);
  d.labeled = read_labels_csv(path("labeled.csv"), *space_);
  d.augmented = read_configs_csv(path("augmented.csv"), *space_);
  return d;
}

namespace {

ParetoArchive seed_archive(const PreparedData& data, double margin) {
  std::vector<Configuration> configs;
  std::vector<QoRVector> qors;
  for (const auto& l : data.labeled) {
    configs.push_back(l.config);
    qors.push_back(l.qor);
  }
  return ParetoArchive::seeded(configs, qors, margin);
}

}  // namespace

OfflineResult Experiment::offline(const PreparedData& data) {
  std::filesystem::create_directories(cfg_.output_dir);
  write_manifest();
  const auto& dc = cfg_.diffusion;
  ParetoArchive archive = seed_archive(data, cfg_.online.reference_margin);

  Rng drng(seeds_.denoiser);
  DenoiserHyper dh{dc.hidden, dc.blocks, dc.embed_dim, nn::activation_from_string(dc.activation)};
  auto model = DenoiserModel::create(space_->num_params(), space_->width(),
                                     NoiseSchedule::make(dc.timesteps, dc.beta_start, dc.beta_end), dh, drng);
  std::vector<SignedTensor> corpus;
  corpus.reserve(data.unlabeled.size() + data.augmented.size());
  for (const auto& c : data.unlabeled) corpus.push_back(space_->to_signed(c));
  for (const auto& c : data.augmented) corpus.push_back(space_->to_signed(c));
  DenoiserTrainConfig tc;
  tc.steps = dc.train_steps;
  tc.batch_size = dc.batch_size;
  tc.adam.learning_rate = dc.learning_rate;
  auto history = train_denoiser(model, corpus, tc, drng);

  Rng prng(seeds_.predictor);
  PredictorTrainConfig pc;
  pc.epochs = cfg_.predictor.epochs;
  pc.batch_size = cfg_.predictor.batch_size;
  pc.adam.learning_rate = cfg_.predictor.learning_rate;
  pc.holdout_fraction = cfg_.predictor.holdout_fraction;
  pc.net = {cfg_.predictor.hidden, cfg_.predictor.blocks, nn::activation_from_string(cfg_.predictor.activation)};
  auto labeled = to_bitmaps(*space_, data.labeled);
  auto predictor = train_predictor(labeled, pc, prng, &archive.bounds());

  OfflineResult r{std::move(model), std::move(predictor), std::move(archive), 0.0, std::move(history)};
  r.offline_hypervolume = r.archive.hypervolume();

  r.denoiser.save(path("denoiser.json"), seeds_.denoiser);
  r.predictor.save(path("predictor.json"));
  write_loss_csv(path("denoiser_loss.csv"), r.history);
  json state = {{"format", "invdse-offline"},
                {"version", 1},
                {"bounds", {{"lo", r.archive.bounds().lo}, {"hi", r.archive.bounds().hi}}},
                {"reference", r.archive.reference()},
                {"offline_hypervolume", r.offline_hypervolume},
                {"front_size", r.archive.front().size()},
                {"predictor_holdout_rmse", r.predictor.holdout_rmse},
                {"denoiser_final_loss", r.history.loss.empty() ? 0.0 : r.history.loss.back()}};
  detail::write_json_file(path("offline_state.json"), state);
  write_archive_csv(path("offline_archive.csv"), *space_, r.archive);
  return r;
}

OfflineResult Experiment::load_offline(const PreparedData& data) const {
  ParetoArchive archive = seed_archive(data, cfg_.online.reference_margin);
  auto state = detail::read_json_file(path("offline_state.json"));
  detail::require_format(state, "invdse-offline", 1);
  if (state.at("reference").get<Objective>() != archive.reference()) {
    throw ConfigError("offline state does not match the labeled data; rerun the offline phase");
  }
  OfflineResult r{DenoiserModel::load(path("denoiser.json")), QoRPredictor::load(path("predictor.json")),
                  std::move(archive), 0.0, {}};
  r.offline_hypervolume = r.archive.hypervolume();
  return r;
}

RunResult Experiment::online(const OfflineResult& off) {
  std::filesystem::create_directories(cfg_.output_dir);
  write_manifest();
  RunResult res{"inverse", {}, {}, {}, off.archive};
  QoREvaluator oracle(oracle_, cfg_.online.budget);
  Rng rng(seeds_.online);
  Rng retrain_rng(seeds_.retrain);
  QoRPredictor predictor = off.predictor;
  const auto& model = off.denoiser;
  auto sampler = SamplerConfig::uniform(model.schedule, cfg_.diffusion.sampler_steps, cfg_.diffusion.clamp_x0);
  GuidanceConfig gcfg{cfg_.guidance.strength, guidance_weights(cfg_), cfg_.guidance.frozen_eps};
  ConditionSelectorConfig scfg{cfg_.online.step_size, cfg_.online.candidates_per_point};

  std::vector<LabeledBitmap> seen = to_bitmaps(*space_, [&] {
    std::vector<LabeledConfig> v;
    for (const auto& r : off.archive.records()) v.push_back({r.config, r.qor});
    return v;
  }());
  std::vector<std::string> guidance_rows;

  int iteration = 0;
  while (oracle.remaining() > 0) {
    auto t0 = std::chrono::steady_clock::now();
    auto sel = select_target(res.archive, scfg, rng);
    TargetGuidance hook(model, predictor, sel.target, gcfg);
    const std::size_t batch = std::min(cfg_.online.batch_size, oracle.remaining());
    auto sample = ddim_sample(model, sampler, rng, &hook, static_cast<Eigen::Index>(batch));

    std::vector<LabeledBitmap> fresh;
    std::unordered_set<Configuration, ConfigurationHash> chosen;
    for (std::size_t b = 0; b < batch; ++b) {
      RunRecord rec;
      rec.iteration = iteration;
      rec.target = sel.target;
      rec.target_score = sel.hvi;
      Eigen::MatrixXd column = sample.x0.col(static_cast<Eigen::Index>(b));
      Configuration candidate;
      for (int attempt = 0;; ++attempt) {
        auto raw = space_->decode(column_tensor(model, column, 0));
        ++res.stats.generated;
        bool valid = space_->is_valid(raw);
        if (!valid) ++res.stats.pre_legal_invalid;
        if (attempt == 0) rec.pre_legal_valid = valid;
        candidate = valid ? raw : space_->legalize(raw);
        rec.legalized = !valid;
        if (!res.archive.contains(candidate) && !chosen.count(candidate)) break;
        if (attempt >= cfg_.online.max_resamples) {
          const auto& base = nearest_front(res.archive, sel.target);
          candidate = space_->mutate(base, cfg_.data.mutation_rate, rng);
          for (int tries = 0; res.archive.contains(candidate) || chosen.count(candidate); ++tries) {
            candidate = tries < 10000 ? space_->mutate(base, cfg_.data.mutation_rate, rng) : space_->random_config(rng);
          }
          rec.mutate_fallback = true;
          rec.legalized = false;
          ++res.stats.mutate_fallbacks;
          break;
        }
        ++rec.resamples;
        ++res.stats.resamples;
        column = ddim_sample(model, sampler, rng, &hook, 1).x0;
      }
      try {
        rec.qor = oracle.evaluate(candidate);
      } catch (const BudgetExhausted&) {
        res.stats.budget_exhausted = true;
        break;
      }
      chosen.insert(candidate);
      rec.config = candidate;
      res.archive.add(candidate, rec.qor, iteration);
      rec.normalized = res.archive.records().back().normalized;
      rec.hypervolume = res.archive.hypervolume();
      rec.hvi = rec.hypervolume - off.offline_hypervolume;
      res.records.push_back(rec);
      res.wall_seconds.push_back(0.0);
      fresh.push_back({space_->encode(candidate), rec.qor});
      ++res.stats.evaluations;
    }
    int fallbacks = hook.fallback_count();
    res.stats.guidance_fallbacks += static_cast<std::size_t>(fallbacks);
    for (const auto& e : hook.events()) {
      guidance_rows.push_back(fmt::format("{},{},{},{},{},{}", iteration, e.step, e.t, csv::format_double(e.loss),
                                          csv::format_double(e.gradient_norm), e.fallbacks));
    }
    predictor = retrain(predictor, seen, fresh, cfg_.predictor.retrain_epochs, cfg_.predictor.batch_size, retrain_rng);
    seen.insert(seen.end(), fresh.begin(), fresh.end());

    double elapsed = seconds_since(t0);
    std::size_t n_new = fresh.size();
    for (std::size_t k = 0; k < n_new; ++k) {
      res.records[res.records.size() - n_new + k].guidance_fallbacks = fallbacks;
      res.wall_seconds[res.wall_seconds.size() - n_new + k] = elapsed / static_cast<double>(n_new);
    }
    if (res.stats.budget_exhausted || n_new == 0) break;
    ++iteration;
  }

  write_run_records(path("inverse_records.csv"), *space_, res.records);
  write_timings(path("inverse_timings.csv"), res.records, res.wall_seconds);
  write_archive_csv(path("inverse_archive.csv"), *space_, res.archive);
  write_stats(path("inverse_stats.json"), res.stats);
  std::ofstream glog(path("inverse_guidance.csv"));
  glog << "iteration,step,t,loss,gradient_norm,fallbacks\n";
  for (const auto& row : guidance_rows) glog << row << '\n';
  predictor.save(path("predictor_final.json"));
  return res;
}

RunResult Experiment::mobo(const OfflineResult& off) {
  std::filesystem::create_directories(cfg_.output_dir);
  write_manifest();
  RunResult res{"mobo", {}, {}, {}, off.archive};
  QoREvaluator oracle(oracle_, cfg_.online.budget);
  Rng rng(seeds_.mobo);
  MoboConfig mc{cfg_.mobo.pool_size, cfg_.mobo.ehvi_samples, cfg_.mobo.refit_every, cfg_.mobo.hyper_opt,
                cfg_.mobo.center_targets};
  std::vector<MoboStepRecord> trace;
  if (cfg_.online.budget > 0) {
    MoboState state(*space_, off.archive, mc);
    while (oracle.remaining() > 0) {
      auto t0 = std::chrono::steady_clock::now();
      MoboStepRecord step;
      try {
        step = state.step(oracle, rng);
      } catch (const BudgetExhausted&) {
        res.stats.budget_exhausted = true;
        break;
      }
      RunRecord rec;
      rec.iteration = step.iteration;
      rec.target = step.mean;
      rec.target_score = step.ehvi;
      rec.config = step.config;
      rec.qor = step.qor;
      rec.normalized = state.archive().records().back().normalized;
      rec.hypervolume = step.hypervolume;
      rec.hvi = step.hypervolume - off.offline_hypervolume;
      res.records.push_back(rec);
      res.wall_seconds.push_back(seconds_since(t0));
      trace.push_back(step);
      ++res.stats.generated;
      ++res.stats.evaluations;
    }
    res.archive = state.archive();
  }
  write_run_records(path("mobo_records.csv"), *space_, res.records);
  write_timings(path("mobo_timings.csv"), res.records, res.wall_seconds);
  write_archive_csv(path("mobo_archive.csv"), *space_, res.archive);
  write_stats(path("mobo_stats.json"), res.stats);
  write_mobo_trace(path("mobo_trace.csv"), *space_, trace);
  return res;
}

ReportSummary Experiment::report() const {
  auto state = detail::read_json_file(path("offline_state.json"));
  detail::require_format(state, "invdse-offline", 1);
  ObjectiveBounds bounds;
  bounds.lo = state.at("bounds").at("lo").get<Objective>();
  bounds.hi = state.at("bounds").at("hi").get<Objective>();
  const Objective ref = state.at("reference").get<Objective>();
  PreparedData data;
  data.labeled = read_labels_csv(path("labeled.csv"), *space_);

  ReportSummary summary;
  ParetoArchive offline(bounds, ref);
  for (const auto& l : data.labeled) offline.add(l.config, l.qor, -1);
  summary.offline_hypervolume = offline.hypervolume();

  std::vector<PlotSeries> series;
  auto series_of = [](const std::string& name, const ParetoArchive& a, bool offline_only) {
    PlotSeries s{name, {}, {}};
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto& r = a.records()[i];
      if (offline_only != (r.iteration < 0)) continue;
      s.points.push_back(r);
      s.on_front.push_back(a.on_front(i));
    }
    return s;
  };
  series.push_back(series_of("offline", offline, true));

  std::map<std::string, std::vector<double>> hvi_series;
  json methods = json::object();
  for (const std::string method : {"inverse", "mobo"}) {
    if (!std::filesystem::exists(path(method + "_records.csv"))) continue;
    auto records = read_run_records(path(method + "_records.csv"), *space_);
    ParetoArchive archive = offline;
    for (const auto& r : records) archive.add(r.config, r.qor, r.iteration);
    MethodSummary m;
    m.method = method;
    m.final_hypervolume = archive.hypervolume();
    m.final_hvi = m.final_hypervolume - summary.offline_hypervolume;
    m.evaluations = records.size();
    std::size_t invalid = 0, generated = records.size();
    if (std::filesystem::exists(path(method + "_stats.json"))) {
      auto st = detail::read_json_file(path(method + "_stats.json"));
      generated = st.at("generated").get<std::size_t>();
      invalid = st.at("pre_legal_invalid").get<std::size_t>();
    }
    m.error_rate = generated ? static_cast<double>(invalid) / static_cast<double>(generated) : 0.0;
    m.best = rank_by_tradeoff(archive, 5);
    auto& hv = hvi_series[method];
    for (const auto& r : records) hv.push_back(r.hvi);

    json best = json::array();
    for (std::size_t i = 0; i < m.best.size(); ++i) {
      const auto& b = m.best[i];
      json cfgj = json::object();
      auto lits = space_->literals(b.config);
      for (std::size_t p = 0; p < lits.size(); ++p) cfgj[space_->param(p).name] = lits[p];
      best.push_back({{"rank", i + 1},
                      {"iteration", b.iteration},
                      {"performance", b.qor.performance},
                      {"power", b.qor.power},
                      {"area", b.qor.area},
                      {"ppa_tradeoff", b.tradeoff},
                      {"config", cfgj}});
    }
    methods[method] = {{"final_hypervolume", m.final_hypervolume},
                       {"final_hvi", m.final_hvi},
                       {"evaluations", m.evaluations},
                       {"error_rate", m.error_rate},
                       {"best_ppa", best}};
    series.push_back(series_of(method, archive, false));
    summary.methods.push_back(std::move(m));
  }

  // HVI per online evaluation; methods with fewer rows repeat their last value.
  {
    std::ofstream out(path("hvi.csv"));
    if (!out) throw Error("cannot write hvi.csv");
    out << "evaluation";
    std::size_t rows = 0;
    for (const auto& [name, v] : hvi_series) {
      out << ',' << name;
      rows = std::max(rows, v.size());
    }
    out << '\n';
    for (std::size_t i = 0; i < rows; ++i) {
      out << i + 1;
      for (const auto& [name, v] : hvi_series) out << ',' << obj_field(v.empty() ? 0.0 : v[std::min(i, v.size() - 1)]);
      out << '\n';
    }
  }
  write_pareto_plots(cfg_.output_dir, series);

  json seeds = json::object();
  for (const auto& [k, v] : seeds_.named()) seeds[k] = v;
  json j = {{"format", "invdse-summary"},
            {"version", 1},
            {"code_version", INVDSE_VERSION},
            {"offline_hypervolume", summary.offline_hypervolume},
            {"reference", ref},
            {"bounds", {{"lo", bounds.lo}, {"hi", bounds.hi}}},
            {"methods", methods},
            {"seeds", seeds},
            {"config", config_to_json(cfg_)}};
  detail::write_json_file(path("summary.json"), j);
  return summary;
}

ReportSummary Experiment::run_all() {
  auto data = prepare();
  auto off = offline(data);
  online(off);
  mobo(off);
  return report();
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kRecordHeader =
    "iteration,target_0,target_1,target_2,target_score,config,pre_legal_valid,legalized,resamples,"
    "mutate_fallback,performance,power,area,norm_0,norm_1,norm_2,hypervolume,hvi,guidance_fallbacks";

}  // namespace

void write_run_records(const std::filesystem::path& path, const DesignSpace& space,
                       const std::vector<RunRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << kRecordHeader << '\n';
  for (const auto& r : records) {
    out << r.iteration;
    for (double v : r.target) out << ',' << obj_field(v);
    out << ',' << obj_field(r.target_score) << ',' << csv::join(space.literals(r.config), ";") << ','
        << int(r.pre_legal_valid) << ',' << int(r.legalized) << ',' << r.resamples << ',' << int(r.mutate_fallback)
        << ',' << obj_field(r.qor.performance) << ',' << obj_field(r.qor.power) << ',' << obj_field(r.qor.area);
    for (double v : r.normalized) out << ',' << obj_field(v);
    out << ',' << obj_field(r.hypervolume) << ',' << obj_field(r.hvi) << ',' << r.guidance_fallbacks << '\n';
  }
}

std::vector<RunRecord> read_run_records(const std::filesystem::path& path, const DesignSpace& space) {
  auto table = csv::read(path);
  if (csv::join(table.header) != kRecordHeader) throw ParseError(path.string() + ": unexpected record header", 1);
  std::vector<RunRecord> out;
  for (const auto& row : table.rows) {
    const auto& f = row.fields;
    const auto ln = row.line;
    RunRecord r;
    r.iteration = static_cast<int>(csv::parse_int(f[0], ln));
    for (std::size_t k = 0; k < kObjectives; ++k) r.target[k] = csv::parse_double(f[1 + k], ln);
    r.target_score = csv::parse_double(f[4], ln);
    std::vector<std::string> lits;
    std::stringstream ss(f[5]);
    for (std::string item; std::getline(ss, item, ';');) lits.push_back(item);
    r.config = space.from_literals(lits, ln);
    r.pre_legal_valid = csv::parse_int(f[6], ln) != 0;
    r.legalized = csv::parse_int(f[7], ln) != 0;
    r.resamples = static_cast<int>(csv::parse_int(f[8], ln));
    r.mutate_fallback = csv::parse_int(f[9], ln) != 0;
    r.qor = {csv::parse_double(f[10], ln), csv::parse_double(f[11], ln), csv::parse_double(f[12], ln)};
    for (std::size_t k = 0; k < kObjectives; ++k) r.normalized[k] = csv::parse_double(f[13 + k], ln);
    r.hypervolume = csv::parse_double(f[16], ln);
    r.hvi = csv::parse_double(f[17], ln);
    r.guidance_fallbacks = static_cast<int>(csv::parse_int(f[18], ln));
    out.push_back(std::move(r));
  }
  return out;
}

void write_archive_csv(const std::filesystem::path& path, const DesignSpace& space, const ParetoArchive& archive) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (const auto& p : space.params()) out << p.name << ',';
  out << "performance,power,area,norm_0,norm_1,norm_2,iteration,on_front\n";
  for (std::size_t i = 0; i < archive.size(); ++i) {
    const auto& r = archive.records()[i];
    out << csv::join(space.literals(r.config)) << ',' << obj_field(r.qor.performance) << ',' << obj_field(r.qor.power)
        << ',' << obj_field(r.qor.area);
    for (double v : r.normalized) out << ',' << obj_field(v);
    out << ',' << r.iteration << ',' << int(archive.on_front(i)) << '\n';
  }
}

}  // namespace invdse

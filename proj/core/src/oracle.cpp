#include "invdse/oracle.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "invdse/csv.hpp"

namespace invdse {

QoREvaluator::QoREvaluator(std::shared_ptr<const QoRSource> source, std::size_t budget)
    : source_(std::move(source)), budget_(budget) {
  if (!source_) throw ConfigError("evaluator needs a QoR source");
}

QoRVector QoREvaluator::evaluate(const Configuration& config) {
  std::size_t cur = calls_.load();
  do {
    if (cur >= budget_) throw BudgetExhausted(fmt::format("evaluation budget of {} exhausted", budget_));
  } while (!calls_.compare_exchange_weak(cur, cur + 1));
  try {
    return source_->evaluate(config);
  } catch (...) {
    calls_.fetch_sub(1);
    throw;
  }
}

// ---------------------------------------------------------------------------

SyntheticOracle::SyntheticOracle(const DesignSpace& space, SyntheticOracleParams params)
    : space_(&space), params_(params) {
  auto at = [&](const char* n) { return space.require_index(n); };
  idx_ = {at("tile_row"),
          at("tile_column"),
          at("mesh_row"),
          at("mesh_column"),
          at("target_clock_period_ns"),
          at("syn_generic_effort"),
          at("syn_map_effort"),
          at("syn_opt_effort"),
          at("auto_ungroup"),
          at("place_utilization"),
          at("place_glo_max_density"),
          at("place_glo_uniform_density"),
          at("place_glo_cong_effort"),
          at("place_glo_timing_effort"),
          at("place_glo_auto_block_in_chan"),
          at("place_det_act_power_driven")};
  if (!(params_.noise >= 0.0 && params_.noise < 0.5)) throw ConfigError("synthetic oracle noise must be in [0, 0.5)");
}

SyntheticOracle::Breakdown SyntheticOracle::breakdown(const Configuration& c) const {
  const auto& s = *space_;
  auto num = [&](std::size_t i) { return s.param(i).numeric_value(c[i]); };
  auto level = [&](std::size_t i) { return static_cast<double>(c[i]); };
  // Boolean parameters list `true` first.
  auto flag = [&](std::size_t i) { return s.param(i).literal(c[i]) == "true" ? 1.0 : 0.0; };

  const double tr = num(idx_.tile_row), tc = num(idx_.tile_col);
  const double mr = num(idx_.mesh_row), mc = num(idx_.mesh_col);
  const double clock_ps = 1000.0 * num(idx_.clock);
  const double gen = level(idx_.generic), map = level(idx_.map), opt = level(idx_.opt);
  const double ungroup = flag(idx_.ungroup);
  const double util = num(idx_.utilization), density = num(idx_.density);
  const double uniform = flag(idx_.uniform);
  const double cong = level(idx_.congestion);
  const double timing_high = level(idx_.timing_effort);
  const double block = level(idx_.auto_block);
  const double power_driven = flag(idx_.power_driven);

  Breakdown b;
  b.macs = tr * mr * tc * mc;

  const double syn_speed = 1.0 - 0.03 * gen - 0.02 * map - 0.012 * opt - 0.02 * ungroup;
  const double congestion = (1.0 + 0.8 * (util - 0.3) * (util - 0.3) + 0.15 * (density - util)) *
                            (1.0 - 0.012 * cong) * (1.0 - 0.03 * timing_high) * (1.0 - 0.01 * block) *
                            (1.0 + 0.02 * uniform) * (1.0 + 0.03 * power_driven);
  b.natural_ps = (params_.base_delay_ps + params_.tile_delay_ps * std::log2(tr * tc) +
                  params_.mesh_delay_ps * std::log2(mr * mc)) *
                 syn_speed * congestion;
  b.timing_ps = std::max(params_.max_speedup * b.natural_ps, std::min(clock_ps, b.natural_ps));
  b.upsize = b.natural_ps / b.timing_ps;

  const double power_factor = (1.0 + 0.01 * gen + 0.015 * map + 0.01 * opt) * (1.0 + 0.04 * ungroup) *
                              (1.0 - 0.2 * (density - util)) * (1.0 - 0.03 * uniform) *
                              (1.0 + 0.03 * timing_high) * (1.0 + 0.005 * cong) * (1.0 - 0.1 * power_driven);
  const double area_factor =
      1.0 + 0.02 * gen + 0.015 * map + 0.015 * opt - 0.04 * ungroup + 0.01 * cong + 0.025 * block;

  b.qor.performance = b.macs / b.timing_ps;
  b.qor.power = params_.power_coeff * b.macs * (1000.0 / b.timing_ps) * std::pow(b.upsize, 1.6) * power_factor;
  b.qor.area = params_.area_coeff * b.macs / util * std::pow(b.upsize, 0.7) * area_factor;
  return b;
}

QoRVector SyntheticOracle::evaluate(const Configuration& config) const {
  if (config.size() != space_->num_params()) throw OracleError("synthetic oracle: configuration arity mismatch");
  if (!space_->is_valid(config)) throw OracleError("synthetic oracle: configuration violates design rules");
  auto q = breakdown(config).qor;
  if (params_.noise > 0.0) {
    std::uint64_t h = splitmix64(params_.seed);
    for (auto v : config.choices()) h = splitmix64(h ^ v);
    auto jitter = [&](std::uint64_t k) {
      std::uint64_t u = splitmix64(h + k);
      double unit = static_cast<double>(u >> 11) * 0x1.0p-53;  // [0, 1)
      return 1.0 + params_.noise * (2.0 * unit - 1.0);
    };
    q.performance *= jitter(1);
    q.power *= jitter(2);
    q.area *= jitter(3);
  }
  return q;
}

// ---------------------------------------------------------------------------

TableOracle TableOracle::load(const std::filesystem::path& path, const DesignSpace& space) {
  TableOracle t;
  t.space_ = &space;
  auto labels = csv::read(path);
  std::vector<std::size_t> cols;
  for (const auto& p : space.params()) cols.push_back(labels.column(p.name));
  auto perf = labels.column("performance"), power = labels.column("power"), area = labels.column("area");
  std::map<Configuration, std::size_t> seen;
  for (const auto& row : labels.rows) {
    std::vector<std::string> lits;
    for (auto c : cols) lits.push_back(row.fields[c]);
    auto config = space.from_literals(lits, row.line);
    QoRVector q{csv::parse_double(row.fields[perf], row.line), csv::parse_double(row.fields[power], row.line),
                csv::parse_double(row.fields[area], row.line)};
    if (!q.valid()) throw ParseError("QoR values must be positive and finite", row.line);
    auto [it, inserted] = seen.emplace(config, row.line);
    if (!inserted) {
      throw ParseError(fmt::format("{}: duplicate configuration on lines {} and {}", path.string(), it->second, row.line),
                       row.line);
    }
    t.table_.emplace(std::move(config), q);
  }
  return t;
}

QoRVector TableOracle::evaluate(const Configuration& config) const {
  auto it = table_.find(config);
  if (it == table_.end()) {
    throw OracleError("table oracle has no label for " + (space_ ? space_->describe(config) : std::string("config")));
  }
  return it->second;
}

double perf_metric(long dim, double timing_ps) {
  if (dim < 1) throw Error("perf_metric: dimension must be >= 1");
  if (!(timing_ps > 0.0)) throw Error("perf_metric: timing must be positive");
  return static_cast<double>(dim) * static_cast<double>(dim) / timing_ps;
}

double ppa_tradeoff(double perf, double power_w, double area_um2) {
  if (!(power_w > 0.0) || !(area_um2 > 0.0)) throw Error("ppa_tradeoff: power and area must be positive");
  return perf * perf / (power_w * area_um2);
}

void write_labels_csv(const std::filesystem::path& path, const DesignSpace& space,
                      const std::vector<LabeledConfig>& labels) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  std::vector<std::string> header;
  for (const auto& p : space.params()) header.push_back(p.name);
  header.insert(header.end(), {"performance", "power", "area"});
  out << csv::join(header) << '\n';
  for (const auto& l : labels) {
    auto fields = space.literals(l.config);
    fields.push_back(csv::format_double(l.qor.performance));
    fields.push_back(csv::format_double(l.qor.power));
    fields.push_back(csv::format_double(l.qor.area));
    out << csv::join(fields) << '\n';
  }
}

std::vector<LabeledConfig> read_labels_csv(const std::filesystem::path& path, const DesignSpace& space) {
  auto table = TableOracle::load(path, space);
  // Preserve file order rather than map order.
  auto configs_in_order = [&] {
    auto t = csv::read(path);
    std::vector<std::size_t> cols;
    for (const auto& p : space.params()) cols.push_back(t.column(p.name));
    std::vector<Configuration> out;
    for (const auto& row : t.rows) {
      std::vector<std::string> lits;
      for (auto c : cols) lits.push_back(row.fields[c]);
      out.push_back(space.from_literals(lits, row.line));
    }
    return out;
  }();
  std::vector<LabeledConfig> out;
  out.reserve(configs_in_order.size());
  for (auto& c : configs_in_order) {
    auto q = table.evaluate(c);
    out.push_back({std::move(c), q});
  }
  return out;
}

}  // namespace invdse

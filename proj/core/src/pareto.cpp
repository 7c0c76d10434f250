#include "invdse/pareto.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include <fmt/format.h>

namespace invdse {

bool QoRVector::valid() const {
  auto ok = [](double v) { return std::isfinite(v) && v > 0.0; };
  return ok(performance) && ok(power) && ok(area);
}

Objective to_minimization(const QoRVector& q) { return {-q.performance, q.power, q.area}; }

ObjectiveBounds ObjectiveBounds::from(std::span<const QoRVector> qors) {
  if (qors.empty()) throw ConfigError("objective bounds need at least one point");
  ObjectiveBounds b;
  b.lo.fill(std::numeric_limits<double>::infinity());
  b.hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& q : qors) {
    auto m = to_minimization(q);
    for (std::size_t k = 0; k < kObjectives; ++k) {
      b.lo[k] = std::min(b.lo[k], m[k]);
      b.hi[k] = std::max(b.hi[k], m[k]);
    }
  }
  b.check();
  return b;
}

void ObjectiveBounds::check() const {
  for (std::size_t k = 0; k < kObjectives; ++k) {
    if (!std::isfinite(lo[k]) || !std::isfinite(hi[k]) || !(lo[k] < hi[k])) {
      throw ConfigError(fmt::format("objective {} has degenerate bounds [{}, {}]", k, lo[k], hi[k]));
    }
  }
}

Objective normalize(const QoRVector& q, const ObjectiveBounds& bounds) {
  auto m = to_minimization(q);
  Objective out;
  for (std::size_t k = 0; k < kObjectives; ++k) out[k] = (m[k] - bounds.lo[k]) / (bounds.hi[k] - bounds.lo[k]);
  return out;
}

bool weakly_dominates(const Objective& a, const Objective& b) {
  for (std::size_t k = 0; k < kObjectives; ++k) {
    if (a[k] > b[k]) return false;
  }
  return true;
}

bool dominates(const Objective& a, const Objective& b) {
  bool strict = false;
  for (std::size_t k = 0; k < kObjectives; ++k) {
    if (a[k] > b[k]) return false;
    if (a[k] < b[k]) strict = true;
  }
  return strict;
}

std::vector<std::size_t> pareto_front(std::span<const Objective> points) {
  // A dominating point precedes the point it dominates in lexicographic order, so
  // comparing each point against the front found so far is sufficient.
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });
  std::vector<std::size_t> front;
  for (auto i : order) {
    bool dominated = std::any_of(front.begin(), front.end(), [&](std::size_t f) { return dominates(points[f], points[i]); });
    if (!dominated) front.push_back(i);
  }
  std::sort(front.begin(), front.end());
  return front;
}

namespace {

// Non-dominated 2-D staircase (x ascending, y descending) with its dominated area
// relative to (rx, ry), updated incrementally on insertion.
class Staircase {
 public:
  Staircase(double rx, double ry) : rx_(rx), ry_(ry) {}

  /// Returns false when (x, y) is weakly dominated by the staircase.
  bool insert(double x, double y) {
    auto it = steps_.lower_bound(x);
    if (it != steps_.end() && it->first == x && it->second <= y) return false;
    if (it != steps_.begin()) {
      auto prev = std::prev(it);
      if (prev->second <= y) return false;
    }
    auto prev = it == steps_.begin() ? steps_.end() : std::prev(it);
    if (prev != steps_.end()) area_ -= strip(prev);
    auto last = it;
    while (last != steps_.end() && last->second >= y) {
      area_ -= strip(last);
      ++last;
    }
    steps_.erase(it, last);
    auto pos = steps_.emplace(x, y).first;
    area_ += strip(pos);
    if (prev != steps_.end()) area_ += strip(prev);
    return true;
  }

  double area() const { return area_; }

 private:
  using Map = std::map<double, double>;

  double strip(Map::const_iterator it) const {
    auto next = std::next(it);
    double right = next == steps_.end() ? rx_ : next->first;
    return (right - it->first) * (ry_ - it->second);
  }

  double rx_, ry_;
  Map steps_;
  double area_ = 0.0;
};

// Points are assumed to satisfy p < ref in every coordinate.
double hv_inside(std::vector<Objective> pts, const Objective& ref) {
  if (pts.empty()) return 0.0;
  // Sweep in (z, x, y) order. A weakly dominated point leaves the staircase untouched, and a
  // slab is closed only when the area changes, so such points do not perturb the sum.
  std::sort(pts.begin(), pts.end(), [](const Objective& a, const Objective& b) {
    return std::tie(a[2], a[0], a[1]) < std::tie(b[2], b[0], b[1]);
  });
  Staircase stairs(ref[0], ref[1]);
  double volume = 0.0;
  double slab_start = pts.front()[2];
  for (const auto& p : pts) {
    const double before = stairs.area();
    if (!stairs.insert(p[0], p[1])) continue;
    volume += before * (p[2] - slab_start);
    slab_start = p[2];
  }
  volume += stairs.area() * (ref[2] - slab_start);
  return volume;
}

bool strictly_inside(const Objective& p, const Objective& ref) {
  for (std::size_t k = 0; k < kObjectives; ++k) {
    if (!(p[k] < ref[k])) return false;
  }
  return true;
}

}  // namespace

double hypervolume(std::span<const Objective> points, const Objective& ref) {
  std::vector<Objective> inside;
  inside.reserve(points.size());
  for (const auto& p : points) {
    for (std::size_t k = 0; k < kObjectives; ++k) {
      if (!std::isfinite(p[k]) || p[k] > ref[k]) {
        throw Error(fmt::format("hypervolume: point ({}, {}, {}) lies outside the reference box", p[0], p[1], p[2]));
      }
    }
    if (strictly_inside(p, ref)) inside.push_back(p);
  }
  return hv_inside(std::move(inside), ref);
}

double hvi_point(const Objective& y_in, std::span<const Objective> front, const Objective& ref) {
  Objective y;
  for (std::size_t k = 0; k < kObjectives; ++k) y[k] = std::min(y_in[k], ref[k]);
  if (!strictly_inside(y, ref)) return 0.0;
  for (const auto& p : front) {
    if (weakly_dominates(p, y)) return 0.0;
  }
  double box = 1.0;
  for (std::size_t k = 0; k < kObjectives; ++k) box *= ref[k] - y[k];
  std::vector<Objective> clipped;
  clipped.reserve(front.size());
  for (const auto& p : front) {
    Objective q;
    for (std::size_t k = 0; k < kObjectives; ++k) q[k] = std::max(p[k], y[k]);
    if (strictly_inside(q, ref)) clipped.push_back(q);
  }
  return std::max(0.0, box - hv_inside(std::move(clipped), ref));
}

EhviEstimate ehvi_mc(const Objective& mean, const Objective& stddev, std::span<const Objective> front,
                     const Objective& ref, std::size_t samples, Rng& rng) {
  for (double s : stddev) {
    if (!(s >= 0.0)) throw Error("ehvi_mc: negative or non-finite standard deviation");
  }
  if (samples == 0) throw Error("ehvi_mc: need at least one sample");
  std::normal_distribution<double> normal(0.0, 1.0);
  // Welford accumulation keeps a constant sample stream exact.
  double avg = 0.0, m2 = 0.0;
  for (std::size_t n = 1; n <= samples; ++n) {
    Objective y;
    for (std::size_t k = 0; k < kObjectives; ++k) y[k] = mean[k] + stddev[k] * normal(rng);
    double v = hvi_point(y, front, ref);
    double delta = v - avg;
    avg += delta / static_cast<double>(n);
    m2 += delta * (v - avg);
  }
  double var = samples > 1 ? m2 / static_cast<double>(samples - 1) : 0.0;
  return {avg, std::sqrt(var / static_cast<double>(samples))};
}

// ---------------------------------------------------------------------------

ParetoArchive::ParetoArchive(ObjectiveBounds bounds, Objective reference)
    : bounds_(bounds), reference_(reference) {
  bounds_.check();
}

ParetoArchive ParetoArchive::seeded(std::span<const Configuration> configs, std::span<const QoRVector> qors,
                                    double reference_margin) {
  if (configs.size() != qors.size()) throw ConfigError("archive seed: config and label counts differ");
  auto bounds = ObjectiveBounds::from(qors);
  Objective ref;
  ref.fill(-std::numeric_limits<double>::infinity());
  for (const auto& q : qors) {
    auto n = normalize(q, bounds);
    for (std::size_t k = 0; k < kObjectives; ++k) ref[k] = std::max(ref[k], n[k]);
  }
  for (auto& r : ref) r += reference_margin;
  ParetoArchive archive(bounds, ref);
  for (std::size_t i = 0; i < configs.size(); ++i) archive.add(configs[i], qors[i], -1);
  return archive;
}

void ParetoArchive::add(const Configuration& config, const QoRVector& qor, int iteration) {
  if (!qor.valid()) throw OracleError("archive: QoR values must be positive and finite");
  ArchiveRecord rec{config, qor, normalize(qor, bounds_), iteration};
  const std::size_t idx = records_.size();
  bool dominated = std::any_of(front_.begin(), front_.end(), [&](std::size_t f) {
    return dominates(records_[f].normalized, rec.normalized);
  });
  if (!dominated) {
    std::erase_if(front_, [&](std::size_t f) { return dominates(rec.normalized, records_[f].normalized); });
    front_.push_back(idx);
    hv_cache_.reset();
  }
  index_.insert(config);
  records_.push_back(std::move(rec));
}

bool ParetoArchive::on_front(std::size_t i) const {
  return std::find(front_.begin(), front_.end(), i) != front_.end();
}

std::vector<Objective> ParetoArchive::front_points() const {
  std::vector<Objective> out;
  out.reserve(front_.size());
  for (auto i : front_) out.push_back(records_[i].normalized);
  return out;
}

std::vector<Objective> ParetoArchive::all_points() const {
  std::vector<Objective> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.normalized);
  return out;
}

double ParetoArchive::hypervolume() const {
  if (!hv_cache_) {
    std::vector<Objective> inside;
    for (auto i : front_) {
      if (strictly_inside(records_[i].normalized, reference_)) inside.push_back(records_[i].normalized);
    }
    hv_cache_ = hv_inside(std::move(inside), reference_);
  }
  return *hv_cache_;
}

TargetSelection select_target(const ParetoArchive& archive, const ConditionSelectorConfig& cfg, Rng& rng) {
  if (archive.size() == 0) throw ConfigError("select_target: archive is empty");
  if (!(cfg.step_size >= 0.0) || cfg.candidates_per_point < 0) {
    throw ConfigError("select_target: step size and candidate count must be non-negative");
  }
  const auto front = archive.front_points();
  const auto& ref = archive.reference();
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  // The r-box runs from the ideal corner (0, or lower if the front already is) up to r.
  Objective floor{};
  for (const auto& p : front) {
    for (std::size_t k = 0; k < kObjectives; ++k) floor[k] = std::min(floor[k], p[k]);
  }
  auto clamp = [&](Objective y) {
    for (std::size_t k = 0; k < kObjectives; ++k) y[k] = std::clamp(y[k], floor[k], ref[k]);
    return y;
  };

  TargetSelection best;
  bool have = false;
  auto consider = [&](const Objective& y, std::size_t anchor) {
    double h = hvi_point(y, front, ref);
    if (!have || h > best.hvi) {
      best = {y, h, anchor, false};
      have = true;
    }
  };
  for (std::size_t f = 0; f < front.size(); ++f) {
    const auto& p = front[f];
    const std::size_t anchor = archive.front()[f];
    for (std::size_t k = 0; k < kObjectives; ++k) {
      Objective y = p;
      y[k] -= cfg.step_size;
      consider(clamp(y), anchor);
    }
    for (int c = 0; c < cfg.candidates_per_point; ++c) {
      Objective y = p;
      for (std::size_t k = 0; k < kObjectives; ++k) y[k] += cfg.step_size * unit(rng);
      consider(clamp(y), anchor);
    }
  }
  best.degenerate = !(best.hvi > 0.0);
  return best;
}

}  // namespace invdse

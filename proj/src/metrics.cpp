#include "floodsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace floodsim::metrics {

void WeightVector::validate() const {
  const double w[4] = {flood, congestion, cancellation, arrival};
  double sum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorKind::InvalidWeights, "weights must be non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorKind::InvalidWeights, "weights must sum to 1");
}

RegionIndex sigmoid_index(std::span<const double> region_values) {
  RegionIndex out;
  if (region_values.empty()) return out;
  const auto stats = world::population_stats(region_values);
  out.per_region.reserve(region_values.size());
  double sum = 0.0;
  for (double v : region_values) {
    const double s = stats.stddev > 0.0 ? 1.0 / (1.0 + std::exp(-(v - stats.mean) / stats.stddev)) : 0.5;
    out.per_region.push_back(s);
    sum += s;
  }
  out.mean = sum / static_cast<double>(region_values.size());
  return out;
}

RegionIndex flood_index(const world::WorldState& world) {
  const auto depths = world::region_mean_depths(world);
  return sigmoid_index(depths);
}

RegionIndex congestion_index(const world::WorldState& world) {
  const auto density = world::region_mean_density(world);
  return sigmoid_index(density);
}

TripRates trip_rates(const TripCounts& counts) {
  if (counts.spawned <= 0) throw Error(ErrorKind::UndefinedRates, "no trips spawned");
  const double n = static_cast<double>(counts.spawned);
  return {static_cast<double>(counts.cancelled) / n, static_cast<double>(counts.arrived_on_time) / n};
}

double objective_j(double f, double t, double c, double r, const WeightVector& weights) {
  weights.validate();
  return weights.flood * f + weights.congestion * t + weights.cancellation * c + weights.arrival * (1.0 - r);
}

double objective_gap(std::span<const double> history, double current) {
  if (history.empty()) return 0.0;
  return current - *std::min_element(history.begin(), history.end());
}

std::string to_string(ThresholdStat stat) { return stat == ThresholdStat::Gap ? "gap" : "j"; }

ThresholdStat parse_threshold_stat(const std::string& text) {
  if (text == "gap") return ThresholdStat::Gap;
  if (text == "j" || text == "J") return ThresholdStat::J;
  throw Error(ErrorKind::ConfigError, "threshold statistic must be 'gap' or 'j'", "metrics.threshold_stat");
}

double adaptive_threshold(std::span<const double> window, double lambda_thr, double floor) {
  if (window.size() < 2) return floor;
  const auto stats = world::population_stats(window);
  return std::max(stats.mean + lambda_thr * stats.stddev, floor);
}

double execution_deviation(const MetricMap& planned, const MetricMap& executed) {
  if (planned.size() != executed.size())
    throw Error(ErrorKind::MetricSetMismatch, "planned and executed metric sets differ");
  if (planned.empty()) return 0.0;
  double sum = 0.0;
  auto it = executed.begin();
  for (const auto& [key, plan] : planned) {
    if (it->first != key) throw Error(ErrorKind::MetricSetMismatch, "metric '" + key + "' missing", key);
    const double d = it->second - plan;
    sum += d * d;
    ++it;
  }
  return std::sqrt(sum / static_cast<double>(planned.size()));
}

MetricMap to_metric_map(const MetricsSnapshot& s) {
  return {{"c", s.c}, {"f", s.f}, {"r", s.r}, {"t", s.t}};
}

void FeedbackWindow::push(const MetricsSnapshot& snapshot, double gap) {
  best_ = history_.empty() ? snapshot.J : std::min(best_, snapshot.J);
  history_.push_back(snapshot.J);
  snapshots_.push_back(snapshot);
  gaps_.push_back(gap);
  while (snapshots_.size() > length_) {
    snapshots_.pop_front();
    gaps_.pop_front();
  }
}

std::vector<double> FeedbackWindow::window_values(ThresholdStat stat) const {
  std::vector<double> out;
  out.reserve(snapshots_.size());
  if (stat == ThresholdStat::Gap) {
    out.assign(gaps_.begin(), gaps_.end());
  } else {
    for (const auto& s : snapshots_) out.push_back(s.J);
  }
  return out;
}

Stability run_stability(const std::vector<std::vector<MetricsSnapshot>>& runs) {
  if (runs.size() < 2) throw Error(ErrorKind::InsufficientRuns, "stability needs at least two runs");
  std::vector<double> f, t, c, r, J;
  for (const auto& run : runs) {
    if (run.empty()) throw Error(ErrorKind::InsufficientRuns, "run without metrics");
    double sf = 0, st = 0, sc = 0, sr = 0, sj = 0;
    for (const auto& s : run) {
      sf += s.f;
      st += s.t;
      sc += s.c;
      sr += s.r;
      sj += s.J;
    }
    const double n = static_cast<double>(run.size());
    f.push_back(sf / n);
    t.push_back(st / n);
    c.push_back(sc / n);
    r.push_back(sr / n);
    J.push_back(sj / n);
  }
  auto var = [](const std::vector<double>& v) {
    const auto s = world::population_stats(v);
    return s.stddev * s.stddev;
  };
  return {var(f), var(t), var(c), var(r), var(J)};
}

}  // namespace floodsim::metrics

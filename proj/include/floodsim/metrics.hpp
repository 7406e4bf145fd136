#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "floodsim/world.hpp"

namespace floodsim::metrics {

// Normalized per-step indicators and the scalar objective.
struct MetricsSnapshot {
  double f = 0.5;
  double t = 0.5;
  double c = 0.0;
  double r = 0.0;
  double J = 0.0;
  int step = 0;

  friend bool operator==(const MetricsSnapshot&, const MetricsSnapshot&) = default;
};

struct WeightVector {
  double flood = 0.3;
  double congestion = 0.3;
  double cancellation = 0.2;
  double arrival = 0.2;

  // Throws InvalidWeights unless every weight is >= 0 and they sum to 1 (1e-9).
  void validate() const;
};

struct RegionIndex {
  std::vector<double> per_region;
  double mean = 0.5;
};

// 1 / (1 + exp(-(x - mu) / sigma)) per region, averaged. With sigma == 0 every
// region sits at the sigmoid centre, 0.5.
RegionIndex sigmoid_index(std::span<const double> region_values);

RegionIndex flood_index(const world::WorldState& world);
RegionIndex congestion_index(const world::WorldState& world);

struct TripCounts {
  long spawned = 0;
  long cancelled = 0;
  long arrived_on_time = 0;
  long arrived_late = 0;
  long enroute = 0;
  long waiting = 0;
};

struct TripRates {
  double c = 0.0;
  double r = 0.0;
};

// Throws UndefinedRates when nothing has been spawned.
TripRates trip_rates(const TripCounts& counts);

double objective_j(double f, double t, double c, double r, const WeightVector& weights);

// J_t minus the minimum of the prior J values; 0 for an empty history.
double objective_gap(std::span<const double> history, double current);

enum class ThresholdStat { Gap, J };

std::string to_string(ThresholdStat stat);
ThresholdStat parse_threshold_stat(const std::string& text);

// max(mean + lambda * stddev, floor) over the window values; the floor alone
// for fewer than two values.
double adaptive_threshold(std::span<const double> window, double lambda_thr, double floor = 0.015);

using MetricMap = std::map<std::string, double>;

// Root-mean-square deviation between executed and planned values.
double execution_deviation(const MetricMap& planned, const MetricMap& executed);

MetricMap to_metric_map(const MetricsSnapshot& s);

// Ring buffer of recent cycle outcomes plus the all-time best J.
class FeedbackWindow {
public:
  explicit FeedbackWindow(std::size_t length = 10) : length_(length) {}

  void push(const MetricsSnapshot& snapshot, double gap);

  std::size_t length() const { return length_; }
  std::size_t size() const { return snapshots_.size(); }
  bool empty() const { return history_.empty(); }
  double best() const { return best_; }

  const std::vector<double>& history() const { return history_; }
  std::vector<double> window_values(ThresholdStat stat) const;
  const std::deque<MetricsSnapshot>& snapshots() const { return snapshots_; }

private:
  std::size_t length_;
  std::deque<MetricsSnapshot> snapshots_;
  std::deque<double> gaps_;
  std::vector<double> history_;
  double best_ = 0.0;
};

struct Stability {
  double f = 0.0;
  double t = 0.0;
  double c = 0.0;
  double r = 0.0;
  double J = 0.0;

  double mean_fctr() const { return (f + t + c + r) / 4.0; }
};

// Population variance across runs of each run's mean metric value.
Stability run_stability(const std::vector<std::vector<MetricsSnapshot>>& runs);

}  // namespace floodsim::metrics

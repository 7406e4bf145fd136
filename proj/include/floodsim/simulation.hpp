#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "floodsim/knowledge.hpp"
#include "floodsim/metrics.hpp"
#include "floodsim/mobility.hpp"
#include "floodsim/world.hpp"

namespace floodsim::feedback {

struct PopulationOptions {
  int initial_agents = 500;
  int initial_departure_spread = 20;  // initial departures spread over [0, spread]
  double spawn_rate = 4.0;            // new residents per step
  int origin_jitter = 6;
  double trip_scale = 10.0;  // distance decay of destination choice, 0 disables
  int trip_window = 30;      // c and r count trips departing in the last N steps, 0 counts all
  int poi_count = 24;
  int bus_lines = 8;
  int stops_per_line = 4;
  int bus_headway = 20;  // steps between departures on a line
};

// Order-insensitive fold of per-agent step feedback.
struct CycleAggregate {
  long items = 0;
  long advanced = 0;
  long blocked = 0;
  long cancelled = 0;
  long arrived = 0;
  long replanned = 0;
  double max_depth = 0.0;
  double max_density = 0.0;

  friend bool operator==(const CycleAggregate&, const CycleAggregate&) = default;
};

CycleAggregate aggregate(CycleAggregate report, const mobility::AgentFeedback& item);

struct StepRecord {
  metrics::MetricsSnapshot snapshot;
  double rain = 0.0;
  double total_water = 0.0;
  long enroute = 0;
};

// The city, its rainfall and its population advanced one step at a time.
class Simulation {
public:
  Simulation(const world::WorldOptions& world_options, const mobility::MobilityParams& mobility,
             const PopulationOptions& population, const metrics::WeightVector& weights,
             world::RainfallScenario scenario, std::uint64_t seed);

  world::WorldState& world() { return world_; }
  const world::WorldState& world() const { return world_; }
  const world::RainfallScenario& scenario() const { return scenario_; }
  const mobility::MobilityParams& mobility() const { return mobility_; }
  const std::vector<mobility::AgentRecord>& agents() const { return agents_; }
  const std::vector<mobility::Poi>& pois() const { return pois_; }
  const std::vector<StepRecord>& steps() const { return steps_; }

  int step_index() const { return world_.step; }
  int horizon() const { return scenario_.steps; }
  bool finished() const { return world_.step >= scenario_.steps; }

  // Hydrology, demand, departures, agent moves and flow aggregation for the
  // current step, then the step counter advances.
  void step(const mobility::TrafficControls& controls, std::span<const double> drainage_multiplier,
            CycleAggregate* aggregate_out = nullptr);

  // Called after every completed step.
  void set_step_observer(std::function<void(const Simulation&)> observer) { observer_ = std::move(observer); }

  // Replans enroute agents whose routes cross newly closed or avoided cells.
  int refresh_routes(const mobility::TrafficControls& controls);

  // Resident trips only; buses are service vehicles, not demand. window > 0
  // keeps trips whose departure falls in the last `window` steps.
  metrics::TripCounts resident_counts(int window = 0) const;
  metrics::MetricsSnapshot snapshot() const;
  knowledge::StateSummary summarize(const std::vector<int>& targeted_regions) const;
  std::vector<mobility::TripRecord> trips() const;

  // "step,width,height" header, the values, then one CSV row per grid row.
  void write_density_dump(std::ostream& out) const;

private:
  void spawn(int step);
  void spawn_buses(int step);

  world::WorldState world_;
  mobility::MobilityParams mobility_;
  PopulationOptions population_;
  metrics::WeightVector weights_;
  world::RainfallScenario scenario_;
  std::uint64_t seed_;
  std::vector<mobility::Poi> pois_;
  std::vector<std::vector<GridCoord>> bus_lines_;
  std::vector<mobility::AgentRecord> agents_;
  std::vector<StepRecord> steps_;
  int next_id_ = 0;
  std::function<void(const Simulation&)> observer_;
};

}  // namespace floodsim::feedback

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "floodsim/common.hpp"
#include "floodsim/world.hpp"

namespace floodsim::mobility {

enum class Role { Resident, Bus };
enum class TripStatus { Waiting, Enroute, Arrived, Cancelled };
enum class AgentAction { Advance, Detour, Wait, Cancel };

std::string_view to_string(Role role);
std::string_view to_string(TripStatus status);

inline bool is_terminal(TripStatus s) {
  return s == TripStatus::Arrived || s == TripStatus::Cancelled;
}

// Dispatch-side effects an agent consults while moving and planning.
class TrafficControls {
public:
  virtual ~TrafficControls() = default;
  virtual bool is_closed(int cell_index, int step) const = 0;
  virtual bool avoids_region(int region, int step) const = 0;
  virtual bool transit_stopped(int region, int step) const = 0;
};

class NoControls final : public TrafficControls {
public:
  bool is_closed(int, int) const override { return false; }
  bool avoids_region(int, int) const override { return false; }
  bool transit_stopped(int, int) const override { return false; }
};

struct MobilityParams {
  double resident_block_depth = 0.3;  // m
  double bus_block_depth = 0.25;      // m
  double patience_factor = 2.0;       // x planned path length
  int patience_cap = 50;
  double detour_wait_probability = 0.2;
  double on_time_factor = 3.0;        // arrival within factor x planned_steps
  int perception_radius = 3;

  double block_depth(Role role) const {
    return role == Role::Bus ? bus_block_depth : resident_block_depth;
  }
};

struct CellView {
  GridCoord cell;
  double water_depth = 0.0;
  double car_density = 0.0;
  bool blocked = false;
};

// S_t: all in-grid cells within Chebyshev distance `radius` of the agent.
struct Observation {
  int radius = 0;
  GridCoord center;
  std::vector<CellView> cells;
  double max_depth = 0.0;
  double max_density = 0.0;
};

Observation observe(const world::WorldState& world, GridCoord center, int radius, double block_depth);

struct AgentRecord {
  int id = 0;
  Role role = Role::Resident;
  GridCoord position;
  GridCoord origin;
  GridCoord destination;
  std::vector<GridCoord> path;  // remaining cells, path[path_pos] is the next move
  std::size_t path_pos = 0;
  TripStatus status = TripStatus::Waiting;
  int patience = 0;
  int departure_step = 0;
  int arrival_step = -1;
  int planned_steps = 0;
  int travel_steps = 0;

  // The (S_t, A_t, transition, pi) tuple refreshed on every step.
  Observation observation;
  std::vector<AgentAction> feasible_actions;
  std::vector<double> policy;

  // Bus only: remaining stops, last entry is the depot.
  std::vector<GridCoord> stops;
  std::vector<GridCoord> skipped_stops;
  bool paused = false;

  std::size_t remaining_path() const { return path.size() - path_pos; }
};

// Arrived within on_time_factor x the planned path length.
inline bool arrived_on_time(const AgentRecord& agent, const MobilityParams& params) {
  return agent.status == TripStatus::Arrived &&
         agent.travel_steps <= params.on_time_factor * std::max(1, agent.planned_steps);
}

using Passable = std::function<bool(int cell_index)>;

// A* over 4-connected cells with unit cost and a Manhattan heuristic.
// Returns the cells after origin up to and including destination.
std::optional<std::vector<GridCoord>> plan_path(const world::WorldState& world, GridCoord origin,
                                                GridCoord destination, const Passable& passable);

struct Poi {
  GridCoord cell;
  double weight = 1.0;
};

// POI file: CSV with header "x,y,weight" where x is the column and y the row.
std::vector<Poi> read_pois(std::istream& in);
void write_pois(std::ostream& out, const std::vector<Poi>& pois);

// Seeded POI set on road cells.
std::vector<Poi> default_pois(const world::WorldState& world, int count, std::uint64_t seed);

struct DemandOptions {
  int origin_jitter = 6;  // origins land on a road cell within this Manhattan radius of a POI
  int departure_spread = 0;  // departures drawn uniformly from [step, step + spread]
  double trip_scale = 0.0;  // > 0: destination weights decay as exp(-distance / trip_scale) from the origin
};

// Samples floor(rate) agents plus one with probability frac(rate). Origins are
// POI-weighted and jittered onto nearby roads; destinations follow the POI
// weights, optionally decayed with distance from the origin.
std::vector<AgentRecord> spawn_demand(const world::WorldState& world, const std::vector<Poi>& pois,
                                      double rate, std::uint64_t seed, int step, int first_id,
                                      const DemandOptions& options = {});

struct StepContext {
  const world::WorldState& world;
  const TrafficControls& controls;
  int step = 0;
  const MobilityParams& params;
  std::uint64_t seed = 0;
};

// Observations an agent reports back after executing a step.
struct AgentFeedback {
  int agent_id = 0;
  bool advanced = false;
  bool blocked = false;
  bool cancelled = false;
  bool arrived = false;
  bool replanned = false;
  double local_max_depth = 0.0;
  double local_max_density = 0.0;
};

// Plans the initial route, sets patience and marks the agent Enroute.
void depart(AgentRecord& agent, const StepContext& ctx);

AgentFeedback step_agent(AgentRecord& agent, const StepContext& ctx);

struct RerouteResult {
  std::vector<GridCoord> skipped;
  bool cancelled = false;
};

// Recomputes the bus legs with flooded and closed cells impassable.
RerouteResult reroute_bus(AgentRecord& bus, const StepContext& ctx);

// Replans an enroute agent whose remaining path crosses closed cells or
// avoided regions. Returns true when the path changed.
bool refresh_route(AgentRecord& agent, const StepContext& ctx);

// Counts Enroute agents per cell and writes them into the grid's car_density.
void aggregate_flows(const std::vector<AgentRecord>& agents, world::WorldState& world);

struct TripRecord {
  int id = 0;
  Role role = Role::Resident;
  int departure_step = 0;
  TripStatus outcome = TripStatus::Arrived;
  int travel_steps = 0;
  int planned_steps = 0;
};

void write_trip_log(std::ostream& out, const std::vector<TripRecord>& trips);

}  // namespace floodsim::mobility

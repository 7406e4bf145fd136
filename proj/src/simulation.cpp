#include "floodsim/simulation.hpp"

#include <algorithm>
#include <ostream>

#include "floodsim/format.hpp"
#include "floodsim/rng.hpp"

namespace floodsim::feedback {

CycleAggregate aggregate(CycleAggregate report, const mobility::AgentFeedback& item) {
  ++report.items;
  report.advanced += item.advanced;
  report.blocked += item.blocked;
  report.cancelled += item.cancelled;
  report.arrived += item.arrived;
  report.replanned += item.replanned;
  report.max_depth = std::max(report.max_depth, item.local_max_depth);
  report.max_density = std::max(report.max_density, item.local_max_density);
  return report;
}

Simulation::Simulation(const world::WorldOptions& world_options, const mobility::MobilityParams& mobility,
                       const PopulationOptions& population, const metrics::WeightVector& weights,
                       world::RainfallScenario scenario, std::uint64_t seed)
    : world_(world::make_world(world_options, substream_seed(seed, "world"))),
      mobility_(mobility),
      population_(population),
      weights_(weights),
      scenario_(std::move(scenario)),
      seed_(seed) {
  weights_.validate();
  pois_ = mobility::default_pois(world_, population_.poi_count, substream_seed(seed_, "poi"));
  if (pois_.empty()) throw Error(ErrorKind::NoDemandSource, "world has no road cells for POIs");

  // Each line: a depot at a POI and stops drawn from road cells across the city.
  std::vector<int> roads;
  for (int i = 0; i < static_cast<int>(world_.size()); ++i)
    if (world_.cell(i).is_road) roads.push_back(i);
  Rng rng(substream_seed(seed_, "transit"));
  for (int line = 0; line < population_.bus_lines; ++line) {
    std::vector<GridCoord> stops;
    for (int s = 0; s < population_.stops_per_line; ++s) stops.push_back(world_.coord(roads[rng.below(roads.size())]));
    stops.push_back(pois_[static_cast<std::size_t>(line) % pois_.size()].cell);
    bus_lines_.push_back(std::move(stops));
  }
}

void Simulation::spawn_buses(int step) {
  if (population_.bus_headway <= 0 || step % population_.bus_headway != 0) return;
  for (const auto& line : bus_lines_) {
    mobility::AgentRecord bus;
    bus.id = next_id_++;
    bus.role = mobility::Role::Bus;
    bus.origin = bus.position = line.back();
    bus.destination = line.back();
    bus.stops = line;
    bus.departure_step = step;
    agents_.push_back(std::move(bus));
  }
}

void Simulation::spawn(int step) {
  mobility::DemandOptions opts;
  opts.origin_jitter = population_.origin_jitter;
  opts.trip_scale = population_.trip_scale;
  double rate = population_.spawn_rate;
  if (step == 0) {
    rate = population_.initial_agents;
    opts.departure_spread = population_.initial_departure_spread;
  }
  if (rate > 0.0) {
    auto fresh = mobility::spawn_demand(world_, pois_, rate, substream_seed(seed_, "demand"), step, next_id_, opts);
    next_id_ += static_cast<int>(fresh.size());
    for (auto& a : fresh) agents_.push_back(std::move(a));
  }
  spawn_buses(step);
}

void Simulation::step(const mobility::TrafficControls& controls, std::span<const double> drainage_multiplier,
                      CycleAggregate* aggregate_out) {
  if (finished()) return;
  const int t = world_.step;
  const double rain = scenario_.curve[static_cast<std::size_t>(t)];
  world::step_hydrology(world_, rain, drainage_multiplier);
  spawn(t);

  const mobility::StepContext ctx{world_, controls, t, mobility_, substream_seed(seed_, "detour")};
  for (auto& a : agents_)
    if (a.status == mobility::TripStatus::Waiting && a.departure_step <= t) mobility::depart(a, ctx);
  CycleAggregate local;
  for (auto& a : agents_) {
    if (a.status != mobility::TripStatus::Enroute) continue;
    local = aggregate(local, mobility::step_agent(a, ctx));
  }
  mobility::aggregate_flows(agents_, world_);

  StepRecord rec;
  world_.step = t + 1;
  rec.snapshot = snapshot();
  rec.snapshot.step = t;
  rec.rain = rain;
  rec.total_water = world_.total_water();
  rec.enroute = resident_counts().enroute;
  steps_.push_back(rec);
  if (aggregate_out) {
    aggregate_out->items += local.items;
    aggregate_out->advanced += local.advanced;
    aggregate_out->blocked += local.blocked;
    aggregate_out->cancelled += local.cancelled;
    aggregate_out->arrived += local.arrived;
    aggregate_out->replanned += local.replanned;
    aggregate_out->max_depth = std::max(aggregate_out->max_depth, local.max_depth);
    aggregate_out->max_density = std::max(aggregate_out->max_density, local.max_density);
  }
  if (observer_) observer_(*this);
}

int Simulation::refresh_routes(const mobility::TrafficControls& controls) {
  const mobility::StepContext ctx{world_, controls, world_.step, mobility_, substream_seed(seed_, "detour")};
  int changed = 0;
  for (auto& a : agents_) changed += mobility::refresh_route(a, ctx);
  return changed;
}

metrics::TripCounts Simulation::resident_counts(int window) const {
  metrics::TripCounts c;
  for (const auto& a : agents_) {
    if (a.role != mobility::Role::Resident) continue;
    const int last = world_.step - 1;
    if (window > 0 && (a.departure_step > last || a.departure_step <= last - window)) continue;
    ++c.spawned;
    switch (a.status) {
      case mobility::TripStatus::Waiting: ++c.waiting; break;
      case mobility::TripStatus::Enroute: ++c.enroute; break;
      case mobility::TripStatus::Cancelled: ++c.cancelled; break;
      case mobility::TripStatus::Arrived:
        if (mobility::arrived_on_time(a, mobility_))
          ++c.arrived_on_time;
        else
          ++c.arrived_late;
        break;
    }
  }
  return c;
}

metrics::MetricsSnapshot Simulation::snapshot() const {
  metrics::MetricsSnapshot s;
  s.step = world_.step;
  s.f = metrics::flood_index(world_).mean;
  s.t = metrics::congestion_index(world_).mean;
  const auto counts = resident_counts(population_.trip_window);
  if (counts.spawned > 0) {
    const auto rates = metrics::trip_rates(counts);
    s.c = rates.c;
    s.r = rates.r;
  }
  s.J = metrics::objective_j(s.f, s.t, s.c, s.r, weights_);
  return s;
}

knowledge::StateSummary Simulation::summarize(const std::vector<int>& targeted_regions) const {
  knowledge::StateSummary s;
  s.step = world_.step;
  s.rain = world_.step > 0 ? scenario_.curve[static_cast<std::size_t>(world_.step - 1)] : 0.0;
  const auto snap = snapshot();
  s.f = snap.f;
  s.t = snap.t;
  s.c = snap.c;
  s.r = snap.r;
  s.J = snap.J;
  s.flood_by_region = metrics::flood_index(world_).per_region;
  s.congestion_by_region = metrics::congestion_index(world_).per_region;
  s.depth_by_region = world::region_mean_depths(world_);
  for (int r = 0; r < world_.n_regions(); ++r) {
    const auto& roads = world_.region_road_cells(r);
    long blocked = 0;
    for (int i : roads) blocked += world_.cell(i).water_depth >= mobility_.resident_block_depth;
    s.blocked_by_region.push_back(roads.empty() ? 0.0 : static_cast<double>(blocked) / static_cast<double>(roads.size()));
  }
  s.targeted_regions = targeted_regions;
  const auto counts = resident_counts();
  s.spawned = counts.spawned;
  s.enroute = counts.enroute;
  s.arrived = counts.arrived_on_time + counts.arrived_late;
  s.cancelled = counts.cancelled;
  return s;
}

std::vector<mobility::TripRecord> Simulation::trips() const {
  std::vector<mobility::TripRecord> out;
  for (const auto& a : agents_) {
    if (!mobility::is_terminal(a.status)) continue;
    out.push_back({a.id, a.role, a.departure_step, a.status, a.travel_steps, a.planned_steps});
  }
  return out;
}

void Simulation::write_density_dump(std::ostream& out) const {
  out << "step,width,height\n" << world_.step - 1 << ',' << world_.width() << ',' << world_.height() << '\n';
  for (int r = 0; r < world_.height(); ++r) {
    for (int c = 0; c < world_.width(); ++c) {
      if (c) out << ',';
      out << exact(world_.cell(GridCoord{r, c}).car_density);
    }
    out << '\n';
  }
}

}  // namespace floodsim::feedback

#include "floodsim/mobility.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <queue>
#include <sstream>
#include <tuple>

#include "floodsim/rng.hpp"

namespace floodsim::mobility {

namespace {

struct SearchScratch {
  std::vector<int> g;
  std::vector<int> parent;
  std::vector<std::uint32_t> seen;
  std::vector<std::uint32_t> closed;
  std::uint32_t generation = 0;

  void prepare(std::size_t n) {
    if (g.size() != n) {
      g.assign(n, 0);
      parent.assign(n, -1);
      seen.assign(n, 0);
      closed.assign(n, 0);
      generation = 0;
    }
    if (++generation == 0) {
      std::fill(seen.begin(), seen.end(), 0);
      std::fill(closed.begin(), closed.end(), 0);
      generation = 1;
    }
  }
};

SearchScratch& scratch() {
  thread_local SearchScratch s;
  return s;
}

std::size_t weighted_pick(const std::vector<double>& cumulative, Rng& rng) {
  const double u = rng.uniform() * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

int chebyshev(GridCoord a, GridCoord b) { return std::max(std::abs(a.row - b.row), std::abs(a.col - b.col)); }

// Cells an agent treats as impassable when planning: closures, avoided regions
// (except where it is or where it is going), and blockages it can see. Buses
// receive network-wide flood information from the depot.
Passable planning_predicate(const AgentRecord& agent, const StepContext& ctx, bool honour_avoidance,
                            int extra_blocked = -1) {
  const auto& world = ctx.world;
  const double block = ctx.params.block_depth(agent.role);
  const int radius = ctx.params.perception_radius;
  const int here_region = world.cell(agent.position).region_id;
  const int dest_region = world.cell(agent.role == Role::Bus && !agent.stops.empty() ? agent.stops.back()
                                                                                   : agent.destination)
                              .region_id;
  const bool global_view = agent.role == Role::Bus;
  const GridCoord pos = agent.position;
  return [&world, &ctx, block, radius, here_region, dest_region, global_view, pos, honour_avoidance,
          extra_blocked](int idx) {
    if (idx == extra_blocked) return false;
    const auto& c = world.cell(idx);
    if (!c.is_road) return false;
    if (ctx.controls.is_closed(idx, ctx.step)) return false;
    if (honour_avoidance && c.region_id != here_region && c.region_id != dest_region &&
        ctx.controls.avoids_region(c.region_id, ctx.step))
      return false;
    if (c.water_depth >= block && (global_view || chebyshev(world.coord(idx), pos) <= radius)) return false;
    return true;
  };
}

std::optional<std::vector<GridCoord>> plan_with_fallback(const AgentRecord& agent, const StepContext& ctx,
                                                         GridCoord target, int extra_blocked = -1) {
  auto path = plan_path(ctx.world, agent.position, target, planning_predicate(agent, ctx, true, extra_blocked));
  if (!path) path = plan_path(ctx.world, agent.position, target, planning_predicate(agent, ctx, false, extra_blocked));
  return path;
}

bool can_enter(const AgentRecord& agent, const StepContext& ctx, GridCoord cell) {
  const auto& c = ctx.world.cell(cell);
  return c.is_road && c.water_depth < ctx.params.block_depth(agent.role) &&
         !ctx.controls.is_closed(ctx.world.index(cell), ctx.step);
}

int patience_for(int planned, const MobilityParams& params) {
  return std::max(1, std::min(params.patience_cap,
                              static_cast<int>(std::ceil(params.patience_factor * planned))));
}

void arrive(AgentRecord& agent, int step) {
  agent.status = TripStatus::Arrived;
  agent.arrival_step = step;
}

}  // namespace

std::string_view to_string(Role role) { return role == Role::Bus ? "Bus" : "Resident"; }

std::string_view to_string(TripStatus status) {
  switch (status) {
    case TripStatus::Waiting: return "Waiting";
    case TripStatus::Enroute: return "Enroute";
    case TripStatus::Arrived: return "Arrived";
    case TripStatus::Cancelled: return "Cancelled";
  }
  return "Waiting";
}

Observation observe(const world::WorldState& world, GridCoord center, int radius, double block_depth) {
  Observation obs;
  obs.radius = radius;
  obs.center = center;
  for (int r = center.row - radius; r <= center.row + radius; ++r) {
    for (int c = center.col - radius; c <= center.col + radius; ++c) {
      const GridCoord g{r, c};
      if (!world.contains(g)) continue;
      const auto& cell = world.cell(g);
      obs.cells.push_back({g, cell.water_depth, cell.car_density, cell.is_road && cell.water_depth >= block_depth});
      obs.max_depth = std::max(obs.max_depth, cell.water_depth);
      obs.max_density = std::max(obs.max_density, cell.car_density);
    }
  }
  return obs;
}

std::optional<std::vector<GridCoord>> plan_path(const world::WorldState& world, GridCoord origin,
                                                GridCoord destination, const Passable& passable) {
  if (!world.contains(origin) || !world.contains(destination)) return std::nullopt;
  if (origin == destination) return std::vector<GridCoord>{};
  const int goal = world.index(destination);
  if (!passable(goal)) return std::nullopt;

  auto& s = scratch();
  s.prepare(world.size());
  const std::uint32_t gen = s.generation;
  const int w = world.width();
  const int h = world.height();

  using Entry = std::tuple<int, int, int>;  // (f, row, col): ties go to the lower row, then column
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  const int start = world.index(origin);
  s.g[static_cast<std::size_t>(start)] = 0;
  s.parent[static_cast<std::size_t>(start)] = -1;
  s.seen[static_cast<std::size_t>(start)] = gen;
  open.emplace(manhattan(origin, destination), origin.row, origin.col);

  while (!open.empty()) {
    const auto [f, r, c] = open.top();
    open.pop();
    const int idx = r * w + c;
    if (s.closed[static_cast<std::size_t>(idx)] == gen) continue;
    s.closed[static_cast<std::size_t>(idx)] = gen;
    if (idx == goal) break;
    const int g_here = s.g[static_cast<std::size_t>(idx)];
    const int nbr[4][2] = {{r - 1, c}, {r, c - 1}, {r, c + 1}, {r + 1, c}};
    for (const auto& n : nbr) {
      if (n[0] < 0 || n[1] < 0 || n[0] >= h || n[1] >= w) continue;
      const int j = n[0] * w + n[1];
      if (s.closed[static_cast<std::size_t>(j)] == gen) continue;
      if (j != goal && !passable(j)) continue;
      const int g_new = g_here + 1;
      if (s.seen[static_cast<std::size_t>(j)] == gen && s.g[static_cast<std::size_t>(j)] <= g_new) continue;
      s.seen[static_cast<std::size_t>(j)] = gen;
      s.g[static_cast<std::size_t>(j)] = g_new;
      s.parent[static_cast<std::size_t>(j)] = idx;
      open.emplace(g_new + std::abs(n[0] - destination.row) + std::abs(n[1] - destination.col), n[0], n[1]);
    }
  }
  if (s.closed[static_cast<std::size_t>(goal)] != gen) return std::nullopt;

  std::vector<GridCoord> path;
  path.reserve(static_cast<std::size_t>(s.g[static_cast<std::size_t>(goal)]));
  for (int at = goal; at != start; at = s.parent[static_cast<std::size_t>(at)]) path.push_back(world.coord(at));
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<Poi> read_pois(std::istream& in) {
  std::vector<Poi> pois;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line_no == 1 && line.find_first_of("xX") == 0) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    Poi p;
    if (!(ss >> p.cell.col >> p.cell.row >> p.weight) || p.weight < 0.0)
      throw Error(ErrorKind::ConfigError, "malformed POI record", "poi[" + std::to_string(line_no) + "]");
    pois.push_back(p);
  }
  return pois;
}

void write_pois(std::ostream& out, const std::vector<Poi>& pois) {
  out << "x,y,weight\n";
  for (const auto& p : pois) out << p.cell.col << ',' << p.cell.row << ',' << p.weight << '\n';
}

std::vector<Poi> default_pois(const world::WorldState& world, int count, std::uint64_t seed) {
  std::vector<int> roads;
  for (int i = 0; i < static_cast<int>(world.size()); ++i)
    if (world.cell(i).is_road) roads.push_back(i);
  Rng rng(substream_seed(seed, "poi"));
  std::vector<Poi> pois;
  for (int k = 0; k < count && !roads.empty(); ++k) {
    const auto pick = rng.below(roads.size());
    pois.push_back({world.coord(roads[pick]), rng.uniform(0.5, 2.0)});
    roads.erase(roads.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return pois;
}

std::vector<AgentRecord> spawn_demand(const world::WorldState& world, const std::vector<Poi>& pois,
                                      double rate, std::uint64_t seed, int step, int first_id,
                                      const DemandOptions& options) {
  if (pois.empty()) throw Error(ErrorKind::NoDemandSource, "POI set is empty");
  Rng rng(substream_seed(seed, "demand", static_cast<std::uint64_t>(step)));
  const double whole = std::floor(std::max(0.0, rate));
  int count = static_cast<int>(whole);
  if (rng.bernoulli(rate - whole)) ++count;

  std::vector<double> cumulative;
  double acc = 0.0;
  for (const auto& p : pois) cumulative.push_back(acc += p.weight);
  if (acc <= 0.0) throw Error(ErrorKind::NoDemandSource, "POI weights sum to zero");

  std::vector<AgentRecord> agents;
  agents.reserve(static_cast<std::size_t>(count));
  std::vector<GridCoord> candidates;
  for (int k = 0; k < count; ++k) {
    AgentRecord a;
    a.id = first_id + k;
    a.role = Role::Resident;
    const GridCoord anchor = pois[weighted_pick(cumulative, rng)].cell;
    candidates.clear();
    const int j = options.origin_jitter;
    for (int dr = -j; dr <= j; ++dr)
      for (int dc = -(j - std::abs(dr)); dc <= j - std::abs(dr); ++dc) {
        const GridCoord g{anchor.row + dr, anchor.col + dc};
        if (world.contains(g) && world.cell(g).is_road) candidates.push_back(g);
      }
    if (candidates.empty()) {
      for (int i = 0; i < static_cast<int>(world.size()); ++i)
        if (world.cell(i).is_road) candidates.push_back(world.coord(i));
    }
    if (candidates.empty()) throw Error(ErrorKind::NoDemandSource, "no road cell available for an origin");
    a.origin = candidates[rng.below(candidates.size())];
    if (options.trip_scale > 0.0) {
      std::vector<double> decayed;
      double dacc = 0.0;
      for (const auto& p : pois) {
        const int d = std::abs(p.cell.row - a.origin.row) + std::abs(p.cell.col - a.origin.col);
        const double w = p.cell == a.origin ? 0.0 : p.weight * std::exp(-d / options.trip_scale);
        decayed.push_back(dacc += w);
      }
      a.destination = pois[dacc > 0.0 ? weighted_pick(decayed, rng) : weighted_pick(cumulative, rng)].cell;
    } else {
      a.destination = pois[weighted_pick(cumulative, rng)].cell;
    }
    if (a.destination == a.origin) {
      // origins never coincide with their destination
      for (const auto& g : candidates)
        if (g != a.destination) { a.origin = g; break; }
    }
    a.position = a.origin;
    a.departure_step = step + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(0, options.departure_spread)) + 1));
    a.status = TripStatus::Waiting;
    agents.push_back(std::move(a));
  }
  return agents;
}

void depart(AgentRecord& agent, const StepContext& ctx) {
  if (agent.status != TripStatus::Waiting) return;
  agent.position = agent.origin;
  agent.status = TripStatus::Enroute;
  agent.departure_step = ctx.step;
  agent.travel_steps = 0;
  if (agent.role == Role::Bus) {
    const auto result = reroute_bus(agent, ctx);
    if (result.cancelled) return;
  } else {
    auto path = plan_with_fallback(agent, ctx, agent.destination);
    if (!path) {
      agent.status = TripStatus::Cancelled;
      return;
    }
    agent.path = std::move(*path);
    agent.path_pos = 0;
  }
  agent.planned_steps = static_cast<int>(agent.path.size());
  agent.patience = patience_for(agent.planned_steps, ctx.params);
}

RerouteResult reroute_bus(AgentRecord& bus, const StepContext& ctx) {
  RerouteResult result;
  if (is_terminal(bus.status)) return result;
  const double block = ctx.params.bus_block_depth;
  const auto& world = ctx.world;
  Passable passable = [&](int idx) {
    const auto& c = world.cell(idx);
    return c.is_road && c.water_depth < block && !ctx.controls.is_closed(idx, ctx.step);
  };
  std::vector<GridCoord> route;
  std::vector<GridCoord> kept;
  GridCoord cursor = bus.position;
  for (std::size_t k = 0; k < bus.stops.size(); ++k) {
    const GridCoord stop = bus.stops[k];
    auto leg = plan_path(world, cursor, stop, passable);
    if (!leg) {
      result.skipped.push_back(stop);
      continue;
    }
    route.insert(route.end(), leg->begin(), leg->end());
    kept.push_back(stop);
    cursor = stop;
  }
  const bool depot_lost = bus.stops.empty() || kept.empty() || kept.back() != bus.stops.back();
  bus.skipped_stops.insert(bus.skipped_stops.end(), result.skipped.begin(), result.skipped.end());
  if (depot_lost) {
    bus.status = TripStatus::Cancelled;
    result.cancelled = true;
    return result;
  }
  bus.stops = std::move(kept);
  bus.path = std::move(route);
  bus.path_pos = 0;
  return result;
}

bool refresh_route(AgentRecord& agent, const StepContext& ctx) {
  if (agent.status != TripStatus::Enroute) return false;
  const auto& world = ctx.world;
  const int here_region = world.cell(agent.position).region_id;
  const int dest_region = world.cell(agent.destination).region_id;
  bool affected = false;
  for (std::size_t k = agent.path_pos; k < agent.path.size() && !affected; ++k) {
    const int idx = world.index(agent.path[k]);
    const int region = world.cell(idx).region_id;
    affected = ctx.controls.is_closed(idx, ctx.step) ||
               (agent.role == Role::Resident && region != here_region && region != dest_region &&
                ctx.controls.avoids_region(region, ctx.step));
  }
  if (!affected) return false;
  if (agent.role == Role::Bus) {
    reroute_bus(agent, ctx);
    return true;
  }
  auto path = plan_with_fallback(agent, ctx, agent.destination);
  if (!path) return false;
  agent.path = std::move(*path);
  agent.path_pos = 0;
  return true;
}

AgentFeedback step_agent(AgentRecord& agent, const StepContext& ctx) {
  AgentFeedback fb;
  fb.agent_id = agent.id;
  if (agent.status != TripStatus::Enroute) return fb;

  const auto& world = ctx.world;
  const double block = ctx.params.block_depth(agent.role);
  agent.observation = observe(world, agent.position, ctx.params.perception_radius, block);
  fb.local_max_depth = agent.observation.max_depth;
  fb.local_max_density = agent.observation.max_density;
  ++agent.travel_steps;

  if (agent.role == Role::Bus && ctx.controls.transit_stopped(world.cell(agent.position).region_id, ctx.step)) {
    agent.paused = true;
    agent.feasible_actions = {AgentAction::Wait};
    agent.policy = {1.0};
    return fb;
  }
  agent.paused = false;

  auto finish_if_done = [&]() {
    if (agent.role == Role::Bus) {
      while (!agent.stops.empty() && agent.position == agent.stops.front()) agent.stops.erase(agent.stops.begin());
      if (agent.stops.empty()) arrive(agent, ctx.step);
    } else if (agent.position == agent.destination) {
      arrive(agent, ctx.step);
    }
    fb.arrived = agent.status == TripStatus::Arrived;
  };

  if (agent.remaining_path() == 0) {
    finish_if_done();
    if (agent.status == TripStatus::Arrived) return fb;
  }

  bool moved = false;
  if (agent.remaining_path() > 0 && can_enter(agent, ctx, agent.path[agent.path_pos])) {
    agent.feasible_actions = {AgentAction::Advance};
    agent.policy = {1.0};
    agent.position = agent.path[agent.path_pos++];
    moved = true;
  } else {
    fb.blocked = true;
    const int blocked_idx = agent.remaining_path() > 0 ? world.index(agent.path[agent.path_pos]) : -1;
    const double p_wait = agent.role == Role::Bus ? 0.0 : ctx.params.detour_wait_probability;
    agent.feasible_actions = {AgentAction::Detour, AgentAction::Wait, AgentAction::Cancel};
    agent.policy = {1.0 - p_wait, p_wait, 0.0};
    const bool wait = hash_uniform(ctx.seed, static_cast<std::uint64_t>(agent.id),
                                   static_cast<std::uint64_t>(ctx.step)) < p_wait;
    if (!wait) {
      fb.replanned = true;
      if (agent.role == Role::Bus && agent.stops.size() >= 2) {
        reroute_bus(agent, ctx);
        if (agent.status == TripStatus::Cancelled) {
          fb.cancelled = true;
          return fb;
        }
      } else {
        const GridCoord target = agent.role == Role::Bus ? agent.stops.back() : agent.destination;
        if (auto path = plan_with_fallback(agent, ctx, target, blocked_idx)) {
          agent.path = std::move(*path);
          agent.path_pos = 0;
        }
      }
      if (agent.remaining_path() > 0 && can_enter(agent, ctx, agent.path[agent.path_pos])) {
        agent.position = agent.path[agent.path_pos++];
        moved = true;
      }
    }
  }

  fb.advanced = moved;
  if (moved) {
    finish_if_done();
    return fb;
  }
  if (--agent.patience <= 0) {
    agent.patience = 0;
    agent.status = TripStatus::Cancelled;
    agent.feasible_actions = {AgentAction::Cancel};
    agent.policy = {1.0};
    fb.cancelled = true;
  }
  return fb;
}

void aggregate_flows(const std::vector<AgentRecord>& agents, world::WorldState& world) {
  for (int i = 0; i < static_cast<int>(world.size()); ++i) world.cell(i).car_density = 0.0;
  for (const auto& a : agents)
    if (a.status == TripStatus::Enroute) world.cell(a.position).car_density += 1.0;
}

void write_trip_log(std::ostream& out, const std::vector<TripRecord>& trips) {
  out << "id,role,departure_step,outcome,travel_steps,planned_steps\n";
  for (const auto& t : trips)
    out << t.id << ',' << to_string(t.role) << ',' << t.departure_step << ',' << to_string(t.outcome) << ','
        << t.travel_steps << ',' << t.planned_steps << '\n';
}

}  // namespace floodsim::mobility

#include <doctest.h>

#include <deque>
#include <numeric>
#include <sstream>
#include <vector>

#include "floodsim/mobility.hpp"
#include "floodsim/rng.hpp"
#include "floodsim/world.hpp"

using namespace floodsim;
using namespace floodsim::mobility;
using world::WorldState;

namespace {

WorldState open_world(int w, int h) {
  WorldState ws(w, h, 1);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) ws.set_road({r, c}, true);
  return ws;
}

// Breadth-first shortest path length, -1 when unreachable.
int bfs_length(const WorldState& ws, GridCoord from, GridCoord to, const Passable& ok) {
  std::vector<int> dist(ws.size(), -1);
  std::deque<int> q;
  dist[static_cast<std::size_t>(ws.index(from))] = 0;
  q.push_back(ws.index(from));
  while (!q.empty()) {
    const int at = q.front();
    q.pop_front();
    if (at == ws.index(to)) return dist[static_cast<std::size_t>(at)];
    const GridCoord p = ws.coord(at);
    const GridCoord nbr[4] = {{p.row - 1, p.col}, {p.row + 1, p.col}, {p.row, p.col - 1}, {p.row, p.col + 1}};
    for (const auto& n : nbr) {
      if (!ws.contains(n)) continue;
      const int j = ws.index(n);
      if (dist[static_cast<std::size_t>(j)] >= 0 || !ok(j)) continue;
      dist[static_cast<std::size_t>(j)] = dist[static_cast<std::size_t>(at)] + 1;
      q.push_back(j);
    }
  }
  return -1;
}

bool valid_route(const WorldState& ws, GridCoord from, const std::vector<GridCoord>& path, const Passable& ok) {
  GridCoord at = from;
  for (const auto& p : path) {
    if (manhattan(at, p) != 1 || !ok(ws.index(p))) return false;
    at = p;
  }
  return true;
}

Passable roads(const WorldState& ws) {
  return [&ws](int i) { return ws.cell(i).is_road; };
}

struct Outcome {
  std::string trip_csv;
  bool accounting = true;
  bool moves_valid = true;
  bool policies_normalised = true;
  bool radius_matches = true;
};

// Small closed-loop mobility run: rain, spawn, depart, step, log.
Outcome run_small(std::uint64_t seed) {
  world::WorldOptions wo;
  wo.width = 24;
  wo.height = 24;
  wo.n_regions = 16;
  auto ws = world::make_world(wo, seed);
  const auto pois = default_pois(ws, 12, seed);
  const auto rain = world::generate_scenario(world::ScenarioKind::Extreme, 60, seed);
  MobilityParams params;
  NoControls controls;
  std::vector<AgentRecord> agents;
  std::vector<TripRecord> trips;
  Outcome out;
  for (int step = 0; step < 60; ++step) {
    ws.step = step;
    world::step_hydrology(ws, rain.curve[static_cast<std::size_t>(step)]);
    DemandOptions demand;
    demand.departure_spread = 3;
    auto fresh = spawn_demand(ws, pois, 2.5, seed, step, static_cast<int>(agents.size()), demand);
    agents.insert(agents.end(), fresh.begin(), fresh.end());
    StepContext ctx{ws, controls, step, params, seed};
    for (auto& a : agents) {
      if (a.status == TripStatus::Waiting && a.departure_step == step) {
        depart(a, ctx);
        if (a.status == TripStatus::Cancelled)
          trips.push_back({a.id, a.role, a.departure_step, a.status, a.travel_steps, a.planned_steps});
      }
      if (a.status != TripStatus::Enroute) continue;
      const GridCoord before = a.position;
      const auto fb = step_agent(a, ctx);
      if (fb.advanced) {
        const auto& c = ws.cell(a.position);
        if (manhattan(before, a.position) != 1 || !c.is_road || c.water_depth >= params.block_depth(a.role))
          out.moves_valid = false;
      } else if (a.position != before) {
        out.moves_valid = false;
      }
      if (a.status == TripStatus::Enroute) {
        const double s = std::accumulate(a.policy.begin(), a.policy.end(), 0.0);
        if (std::abs(s - 1.0) > 1e-9 || a.policy.size() != a.feasible_actions.size()) out.policies_normalised = false;
        if (a.observation.radius != params.perception_radius) out.radius_matches = false;
      }
      if (is_terminal(a.status))
        trips.push_back({a.id, a.role, a.departure_step, a.status, a.travel_steps, a.planned_steps});
    }
    aggregate_flows(agents, ws);
    int counts[4] = {0, 0, 0, 0};
    for (const auto& a : agents) ++counts[static_cast<int>(a.status)];
    if (counts[0] + counts[1] + counts[2] + counts[3] != static_cast<int>(agents.size())) out.accounting = false;
    if (static_cast<int>(trips.size()) != counts[2] + counts[3]) out.accounting = false;
  }
  std::ostringstream csv;
  write_trip_log(csv, trips);
  out.trip_csv = csv.str();
  return out;
}

}  // namespace

TEST_SUITE("mobility") {

TEST_CASE("open grid path has Manhattan length") {
  const auto ws = open_world(8, 8);
  const auto path = plan_path(ws, {0, 0}, {3, 4}, roads(ws));
  REQUIRE(path);
  CHECK(path->size() == 7);
  CHECK(path->back() == GridCoord{3, 4});
  CHECK(valid_route(ws, {0, 0}, *path, roads(ws)));
  CHECK(plan_path(ws, {2, 2}, {2, 2}, roads(ws))->empty());
}

TEST_CASE("ties go to the lower row") {
  const auto ws = open_world(4, 4);
  const auto path = plan_path(ws, {0, 0}, {1, 1}, roads(ws));
  REQUIRE(path);
  CHECK(*path == std::vector<GridCoord>{{0, 1}, {1, 1}});
}

TEST_CASE("wall with one gap matches BFS") {
  auto ws = open_world(10, 10);
  for (int r = 0; r < 10; ++r)
    if (r != 8) ws.set_road({r, 5}, false);
  const auto path = plan_path(ws, {0, 0}, {0, 9}, roads(ws));
  REQUIRE(path);
  CHECK(static_cast<int>(path->size()) == bfs_length(ws, {0, 0}, {0, 9}, roads(ws)));
  CHECK(path->size() == 25);
  CHECK(valid_route(ws, {0, 0}, *path, roads(ws)));
}

TEST_CASE("random obstacle fields match BFS") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto ws = open_world(15, 15);
    Rng rng(seed);
    for (int i = 0; i < static_cast<int>(ws.size()); ++i)
      if (rng.bernoulli(0.3)) ws.set_road(ws.coord(i), false);
    ws.set_road({0, 0}, true);
    ws.set_road({14, 14}, true);
    const int oracle = bfs_length(ws, {0, 0}, {14, 14}, roads(ws));
    const auto path = plan_path(ws, {0, 0}, {14, 14}, roads(ws));
    if (oracle < 0) {
      CHECK_FALSE(path);
    } else {
      REQUIRE(path);
      CHECK(static_cast<int>(path->size()) == oracle);
      CHECK(valid_route(ws, {0, 0}, *path, roads(ws)));
    }
  }
}

TEST_CASE("enclosed destination has no path") {
  auto ws = open_world(9, 9);
  for (const GridCoord c : {GridCoord{3, 4}, GridCoord{5, 4}, GridCoord{4, 3}, GridCoord{4, 5}}) ws.set_road(c, false);
  CHECK_FALSE(plan_path(ws, {0, 0}, {4, 4}, roads(ws)));
  CHECK_FALSE(plan_path(ws, {0, 0}, {20, 20}, roads(ws)));
}

TEST_CASE("demand sampling") {
  const auto ws = open_world(20, 20);
  const std::vector<Poi> pois{{{2, 2}, 3.0}, {{17, 17}, 1.0}};

  SUBCASE("rate zero") { CHECK(spawn_demand(ws, pois, 0.0, 1, 0, 0).empty()); }

  SUBCASE("fixed seed repeats") {
    const auto a = spawn_demand(ws, pois, 5.0, 42, 3, 0);
    const auto b = spawn_demand(ws, pois, 5.0, 42, 3, 0);
    REQUIRE(a.size() == 5);
    REQUIRE(b.size() == 5);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].origin == b[i].origin);
      CHECK(a[i].destination == b[i].destination);
      CHECK(a[i].departure_step == b[i].departure_step);
      CHECK(a[i].status == TripStatus::Waiting);
      CHECK(a[i].origin != a[i].destination);
    }
  }

  SUBCASE("destinations follow 3:1 weights") {
    const auto agents = spawn_demand(ws, pois, 10000.0, 7, 0, 0);
    REQUIRE(agents.size() == 10000);
    int heavy = 0;
    for (const auto& a : agents) heavy += a.destination == GridCoord{2, 2};
    const double ratio = static_cast<double>(heavy) / (10000 - heavy);
    CHECK(ratio == doctest::Approx(3.0).epsilon(0.05));
  }

  SUBCASE("fractional rate averages out") {
    int total = 0;
    for (int step = 0; step < 4000; ++step) total += static_cast<int>(spawn_demand(ws, pois, 0.25, 9, step, 0).size());
    CHECK(total / 4000.0 == doctest::Approx(0.25).epsilon(0.1));
  }

  SUBCASE("distance decay favours nearby destinations") {
    DemandOptions near;
    near.trip_scale = 4.0;
    const auto plain = spawn_demand(ws, pois, 4000.0, 11, 0, 0);
    const auto decayed = spawn_demand(ws, pois, 4000.0, 11, 0, 0, near);
    auto mean_len = [](const std::vector<AgentRecord>& v) {
      double s = 0.0;
      for (const auto& a : v) s += manhattan(a.origin, a.destination);
      return s / static_cast<double>(v.size());
    };
    CHECK(mean_len(decayed) < mean_len(plain));
  }

  SUBCASE("empty POI set") {
    CHECK_THROWS_AS(spawn_demand(ws, {}, 1.0, 1, 0, 0), Error);
    try {
      spawn_demand(ws, {}, 1.0, 1, 0, 0);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NoDemandSource);
    }
  }
}

TEST_CASE("POI file round trip") {
  const std::vector<Poi> pois{{{1, 2}, 0.5}, {{7, 3}, 2.0}};
  std::stringstream s;
  write_pois(s, pois);
  const auto back = read_pois(s);
  REQUIRE(back.size() == 2);
  CHECK(back[0].cell == GridCoord{1, 2});
  CHECK(back[1].weight == 2.0);
  std::istringstream bad("x,y,weight\n1,2\n");
  CHECK_THROWS_AS(read_pois(bad), Error);
}

TEST_CASE("stepping along a corridor") {
  WorldState ws(6, 1, 1);
  for (int c = 0; c < 6; ++c) ws.set_road({0, c}, true);
  MobilityParams params;
  NoControls controls;
  AgentRecord a;
  a.origin = {0, 0};
  a.destination = {0, 5};
  StepContext ctx{ws, controls, 0, params, 1};
  depart(a, ctx);
  REQUIRE(a.status == TripStatus::Enroute);
  CHECK(a.planned_steps == 5);
  CHECK(a.patience == 10);

  SUBCASE("clear path advances one cell") {
    const auto fb = step_agent(a, ctx);
    CHECK(fb.advanced);
    CHECK(a.position == GridCoord{0, 1});
    CHECK(a.patience == 10);
  }

  SUBCASE("arrival on the last move") {
    for (int s = 0; s < 4; ++s) step_agent(a, StepContext{ws, controls, s, params, 1});
    REQUIRE(a.position == GridCoord{0, 4});
    step_agent(a, StepContext{ws, controls, 17, params, 1});
    CHECK(a.status == TripStatus::Arrived);
    CHECK(a.arrival_step == 17);
    CHECK(arrived_on_time(a, params));
    const auto frozen = a.position;
    const auto fb = step_agent(a, StepContext{ws, controls, 18, params, 1});
    CHECK_FALSE(fb.advanced);
    CHECK(a.status == TripStatus::Arrived);
    CHECK(a.arrival_step == 17);
    CHECK(a.position == frozen);
  }

  SUBCASE("flooded corridor cancels after patience runs out") {
    ws.cell(GridCoord{0, 2}).water_depth = 0.5;
    step_agent(a, ctx);
    REQUIRE(a.position == GridCoord{0, 1});
    const int patience = a.patience;
    for (int s = 1; s <= patience; ++s) {
      REQUIRE(a.status == TripStatus::Enroute);
      const auto fb = step_agent(a, StepContext{ws, controls, s, params, 1});
      CHECK(fb.blocked);
      CHECK(a.position == GridCoord{0, 1});
      CHECK(a.patience == (s == patience ? 0 : patience - s));
    }
    CHECK(a.status == TripStatus::Cancelled);
  }
}

TEST_CASE("buses") {
  auto ws = open_world(10, 10);
  MobilityParams params;
  NoControls controls;
  AgentRecord bus;
  bus.role = Role::Bus;
  bus.origin = {0, 0};
  bus.destination = {9, 9};
  bus.position = {0, 0};
  bus.status = TripStatus::Enroute;
  bus.stops = {{0, 5}, {5, 5}, {9, 9}};
  StepContext ctx{ws, controls, 0, params, 1};
  Passable dry = [&ws](int i) { return ws.cell(i).is_road && ws.cell(i).water_depth < 0.25; };

  SUBCASE("no flooding keeps the schedule") {
    const auto r = reroute_bus(bus, ctx);
    CHECK_FALSE(r.cancelled);
    CHECK(r.skipped.empty());
    CHECK(bus.stops == std::vector<GridCoord>{{0, 5}, {5, 5}, {9, 9}});
    std::vector<GridCoord> expected;
    GridCoord at{0, 0};
    for (const auto& s : bus.stops) {
      const auto leg = plan_path(ws, at, s, dry);
      expected.insert(expected.end(), leg->begin(), leg->end());
      at = s;
    }
    CHECK(bus.path == expected);
  }

  SUBCASE("isolated stop is skipped") {
    for (const GridCoord c : {GridCoord{4, 5}, GridCoord{6, 5}, GridCoord{5, 4}, GridCoord{5, 6}})
      ws.cell(c).water_depth = 0.4;
    std::vector<GridCoord> reachable;
    for (const auto& s : bus.stops)
      if (bfs_length(ws, {0, 0}, s, dry) >= 0 && dry(ws.index(s))) reachable.push_back(s);
    const auto r = reroute_bus(bus, ctx);
    CHECK_FALSE(r.cancelled);
    CHECK(r.skipped == std::vector<GridCoord>{{5, 5}});
    CHECK(bus.stops == reachable);
    CHECK(bus.skipped_stops == std::vector<GridCoord>{{5, 5}});
    CHECK(valid_route(ws, {0, 0}, bus.path, dry));
  }

  SUBCASE("unreachable depot cancels") {
    ws.cell(GridCoord{8, 9}).water_depth = 0.4;
    ws.cell(GridCoord{9, 8}).water_depth = 0.4;
    const auto r = reroute_bus(bus, ctx);
    CHECK(r.cancelled);
    CHECK(bus.status == TripStatus::Cancelled);
  }

  SUBCASE("stopped transit pauses the bus") {
    struct Halt final : TrafficControls {
      bool is_closed(int, int) const override { return false; }
      bool avoids_region(int, int) const override { return false; }
      bool transit_stopped(int, int) const override { return true; }
    } halt;
    reroute_bus(bus, ctx);
    const auto fb = step_agent(bus, StepContext{ws, halt, 0, params, 1});
    CHECK(bus.paused);
    CHECK_FALSE(fb.advanced);
    CHECK(bus.position == GridCoord{0, 0});
  }
}

TEST_CASE("closures force a detour") {
  auto ws = open_world(5, 5);
  struct Closed final : TrafficControls {
    int cell;
    explicit Closed(int c) : cell(c) {}
    bool is_closed(int i, int) const override { return i == cell; }
    bool avoids_region(int, int) const override { return false; }
    bool transit_stopped(int, int) const override { return false; }
  } closed(ws.index({0, 1}));
  MobilityParams params;
  AgentRecord a;
  a.origin = {0, 0};
  a.destination = {0, 2};
  depart(a, StepContext{ws, closed, 0, params, 1});
  REQUIRE(a.status == TripStatus::Enroute);
  CHECK(a.planned_steps == 4);
  for (const auto& p : a.path) CHECK(p != GridCoord{0, 1});
}

TEST_CASE("flow aggregation") {
  auto ws = open_world(12, 12);

  SUBCASE("no enroute agents") {
    std::vector<AgentRecord> agents(3);
    aggregate_flows(agents, ws);
    for (const auto& c : ws.cells()) CHECK(c.car_density == 0.0);
  }

  SUBCASE("stacked agents") {
    std::vector<AgentRecord> agents(4);
    for (auto& a : agents) {
      a.status = TripStatus::Enroute;
      a.position = {3, 3};
    }
    aggregate_flows(agents, ws);
    CHECK(ws.cell(GridCoord{3, 3}).car_density == 4.0);
  }

  SUBCASE("random placement sums to the enroute count") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      std::vector<AgentRecord> agents(1 + rng.below(60));
      int enroute = 0;
      for (auto& a : agents) {
        a.status = static_cast<TripStatus>(rng.below(4));
        a.position = ws.coord(static_cast<int>(rng.below(ws.size())));
        enroute += a.status == TripStatus::Enroute;
      }
      aggregate_flows(agents, ws);
      double sum = 0.0;
      for (const auto& c : ws.cells()) sum += c.car_density;
      CHECK(sum == enroute);
    }
  }
}

TEST_CASE("closed-loop invariants and determinism") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const auto a = run_small(seed);
    const auto b = run_small(seed);
    CHECK(a.accounting);
    CHECK(a.moves_valid);
    CHECK(a.policies_normalised);
    CHECK(a.radius_matches);
    CHECK(a.trip_csv == b.trip_csv);
    CHECK(a.trip_csv.rfind("id,role,departure_step,outcome,travel_steps,planned_steps\n", 0) == 0);
  }
  CHECK(run_small(1).trip_csv != run_small(2).trip_csv);
}

}

#include <doctest.h>

#include <sstream>

#include "floodsim/rng.hpp"
#include "floodsim/simulation.hpp"
#include "floodsim/translate.hpp"

using namespace floodsim;
using namespace floodsim::translate;

namespace {

policy::RegionalPlan plan_of(int region, std::vector<std::string> directives) {
  policy::RegionalPlan p;
  p.region = region;
  p.provenance = {policy::Verb::RerouteRegion, region};
  p.directives = std::move(directives);
  return p;
}

world::WorldState grid_city(int size, int regions) {
  world::WorldState ws(size, size, regions);
  for (int i = 0; i < static_cast<int>(ws.size()); ++i) {
    const auto c = ws.coord(i);
    if (c.row % 3 == 0 || c.col % 3 == 0) ws.set_road(c, true);
  }
  return ws;
}

}  // namespace

TEST_SUITE("translate") {

TEST_CASE("keyword classification") {
  CHECK(classify_command("reroute buses around region 5") == Tag::Routing);
  CHECK(classify_command("suspend service") == Tag::Stop);
  CHECK(classify_command("close road at cell (12, 7)") == Tag::Obstacle);
  CHECK(classify_command("dispatch pumps to region 3") == Tag::Relief);
  CHECK(classify_command("hold buses at stops in region 1") == Tag::Stop);
  CHECK(classify_command("Divert traffic") == Tag::Routing);
  std::vector<std::string> warnings;
  CHECK(classify_command("sing loudly", &warnings) == Tag::NoOp);
  CHECK(warnings.size() == 1);
  CHECK(classify_command("monitor region 2", &warnings) == Tag::NoOp);
  CHECK(warnings.size() == 1);
}

TEST_CASE("translation") {
  CHECK(translate::translate(plan_of(0, {}), 10, 10).empty());

  const auto one = translate::translate(plan_of(3, {"close road at cell (12, 7)"}), 20, 10);
  REQUIRE(one.size() == 1);
  CHECK(one[0].tag == Tag::Obstacle);
  CHECK(one[0].cell == GridCoord{12, 7});
  CHECK(one[0].region == 3);
  CHECK(one[0].start == 20);
  CHECK(one[0].end == 29);

  const std::vector<std::string> dirs{"reroute traffic around region 2", "suspend bus service in region 2",
                                      "dispatch pumps to region 2", "deploy drainage relief at cell (1, 4)",
                                      "monitor region 2"};
  const auto many = translate::translate(plan_of(2, dirs), 0, 5);
  REQUIRE(many.size() == dirs.size());
  const Tag expected[] = {Tag::Routing, Tag::Stop, Tag::Relief, Tag::Relief, Tag::NoOp};
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    CHECK(many[i].directive == dirs[i]);
    CHECK(many[i].tag == expected[i]);
    CHECK(many[i].start <= many[i].end);
  }
  CHECK(many == translate::translate(plan_of(2, dirs), 0, 5));

  try {
    translate::translate(plan_of(0, {"please reroute"}), 0, 5);
    FAIL("expected UnknownDirective");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownDirective);
  }
}

TEST_CASE("wrapping") {
  const auto ws = grid_city(12, 4);
  WrapOptions opts;
  opts.horizon = 50;

  SUBCASE("road anchor is kept") {
    Instruction i{Tag::Obstacle, 0, GridCoord{3, 4}, {}, 0, 9, "close road at cell (3, 4)"};
    REQUIRE(ws.cell(GridCoord{3, 4}).is_road);
    const auto w = wrap_accuracy(i, ws, opts);
    REQUIRE(w.accepted());
    CHECK(*w.instruction == i);
  }

  SUBCASE("off-road anchors snap to the nearest road cell") {
    Rng rng(2);
    for (int trial = 0; trial < 300; ++trial) {
      const int region = static_cast<int>(rng.below(4));
      const GridCoord anchor{static_cast<int>(rng.below(14)) - 1, static_cast<int>(rng.below(14)) - 1};
      Instruction i{Tag::Obstacle, region, anchor, {}, 0, 5, "close"};
      const auto w = wrap_accuracy(i, ws, opts);
      REQUIRE(w.accepted());
      const auto snapped = *w.instruction->cell;
      int best = 1 << 30;
      GridCoord first{};
      for (int r = 0; r < ws.height(); ++r)
        for (int c = 0; c < ws.width(); ++c) {
          const GridCoord g{r, c};
          if (!ws.cell(g).is_road || ws.cell(g).region_id != region) continue;
          if (manhattan(anchor, g) < best) best = manhattan(anchor, g), first = g;
        }
      CHECK(snapped == first);
      CHECK(ws.contains(snapped));
      CHECK(ws.cell(snapped).region_id == region);
      CHECK(ws.cell(snapped).is_road);
    }
  }

  SUBCASE("windows are clipped to the horizon") {
    Instruction i{Tag::Relief, 1, std::nullopt, {}, 45, 60, "dispatch pumps"};
    const auto w = wrap_accuracy(i, ws, opts);
    REQUIRE(w.accepted());
    CHECK(w.instruction->end == 49);
    i.start = 50;
    CHECK_FALSE(wrap_accuracy(i, ws, opts).accepted());
  }

  SUBCASE("undeployable orders are rejected") {
    auto flooded = ws;
    for (int idx : flooded.region_road_cells(2)) flooded.cell(idx).water_depth = 0.5;
    Instruction route{Tag::Routing, 2, std::nullopt, {}, 0, 5, "reroute traffic around region 2"};
    const auto w = wrap_accuracy(route, flooded, opts);
    CHECK_FALSE(w.accepted());
    CHECK(w.reason.find("fully flooded") != std::string::npos);
    CHECK(wrap_accuracy(route, ws, opts).accepted());

    CHECK_FALSE(wrap_accuracy(Instruction{Tag::Obstacle, 1, std::nullopt, {}, 0, 3, "close"}, ws, opts).accepted());
    CHECK_FALSE(wrap_accuracy(Instruction{Tag::Relief, 4, std::nullopt, {}, 0, 3, "dispatch"}, ws, opts).accepted());
    CHECK_FALSE(wrap_accuracy(Instruction{Tag::Relief, 0, std::nullopt, {}, 5, 3, "dispatch"}, ws, opts).accepted());
  }
}

TEST_CASE("board effects") {
  auto ws = grid_city(12, 4);
  InstructionBoard board(4);

  SUBCASE("closures reroute agents during the window only") {
    world::WorldState corridor(5, 3, 1);
    for (int i = 0; i < static_cast<int>(corridor.size()); ++i) corridor.set_road(corridor.coord(i), true);
    InstructionBoard b(1);
    b.dispatch(Instruction{Tag::Obstacle, 0, GridCoord{1, 2}, {}, 0, 4, "close road at cell (1, 2)"}, corridor);
    mobility::MobilityParams params;
    auto route_at = [&](int step) {
      mobility::AgentRecord a;
      a.origin = {1, 0};
      a.destination = {1, 4};
      mobility::depart(a, mobility::StepContext{corridor, b, step, params, 1});
      return a.path;
    };
    const auto during = route_at(2);
    CHECK(std::find(during.begin(), during.end(), GridCoord{1, 2}) == during.end());
    CHECK(during.size() == 6);
    const auto after = route_at(5);
    CHECK(std::find(after.begin(), after.end(), GridCoord{1, 2}) != after.end());
    CHECK(after.size() == 4);
  }

  SUBCASE("relief raises drainage exactly inside its window") {
    board.dispatch(Instruction{Tag::Relief, 2, std::nullopt, {}, 5, 9, "dispatch pumps to region 2"}, ws);
    for (int step = 0; step < 15; ++step) {
      const auto m = board.drainage_multipliers(step);
      for (int r = 0; r < 4; ++r)
        CHECK(m[static_cast<std::size_t>(r)] == (r == 2 && step >= 5 && step <= 9 ? 3.0 : 1.0));
    }
    for (int idx = 0; idx < static_cast<int>(ws.size()); ++idx) ws.cell(idx).water_depth = 0.2;
    auto plain = ws;
    const auto m = board.drainage_multipliers(7);
    const auto boosted = world::step_hydrology(ws, 0.0, m);
    const auto base = world::step_hydrology(plain, 0.0);
    CHECK(boosted.drained > base.drained);
  }

  SUBCASE("routing and stop windows") {
    board.dispatch(Instruction{Tag::Routing, 1, std::nullopt, {}, 2, 4, "reroute"}, ws);
    board.dispatch(Instruction{Tag::Stop, 3, std::nullopt, {}, 0, 0, "suspend"}, ws);
    board.dispatch(Instruction{Tag::NoOp, 0, std::nullopt, {}, 0, 10, "monitor"}, ws);
    CHECK_FALSE(board.avoids_region(1, 1));
    CHECK(board.avoids_region(1, 3));
    CHECK_FALSE(board.avoids_region(1, 5));
    CHECK(board.transit_stopped(3, 0));
    CHECK_FALSE(board.transit_stopped(3, 1));
    CHECK(board.active_regions(3) == std::vector<int>{1});
    CHECK(board.size() == 3);
    CHECK_THROWS_AS(board.dispatch(Instruction{Tag::Relief, 9, std::nullopt, {}, 0, 1, "x"}, ws), Error);
  }
}

TEST_CASE("NoOp dispatch matches no instructions") {
  world::WorldOptions wo;
  wo.width = 24;
  wo.height = 24;
  wo.n_regions = 16;
  mobility::MobilityParams mp;
  feedback::PopulationOptions po;
  po.initial_agents = 60;
  po.spawn_rate = 1.5;
  po.poi_count = 8;
  po.bus_lines = 2;
  const auto rain = world::generate_scenario(world::ScenarioKind::Extreme, 30, 4);
  feedback::Simulation a(wo, mp, po, {}, rain, 4);
  feedback::Simulation b(wo, mp, po, {}, rain, 4);
  InstructionBoard board(16);
  for (int r = 0; r < 16; ++r) board.dispatch(Instruction{Tag::NoOp, r, std::nullopt, {}, 0, 29, "monitor"}, b.world());
  mobility::NoControls none;
  while (!a.finished()) {
    a.step(none, {});
    b.step(board, board.drainage_multipliers(b.step_index()));
  }
  REQUIRE(a.steps().size() == b.steps().size());
  for (std::size_t i = 0; i < a.steps().size(); ++i) {
    CHECK(a.steps()[i].snapshot == b.steps()[i].snapshot);
    CHECK(a.steps()[i].total_water == b.steps()[i].total_water);
  }
}

TEST_CASE("instruction log") {
  std::vector<InstructionLogRow> rows{
      {1, Instruction{Tag::Obstacle, 2, GridCoord{3, 4}, {}, 10, 19, "close road at cell (3, 4)"}, true, ""},
      {1, Instruction{Tag::Routing, 5, std::nullopt, {}, 10, 19, "reroute traffic around region 5"}, false,
       "infeasible routing: region 5, fully flooded"}};
  std::ostringstream out;
  write_instruction_log(out, rows);
  const auto text = out.str();
  CHECK(text.rfind("cycle,region,tag,anchor,window_start,window_end,status,reason,directive\n", 0) == 0);
  CHECK(text.find("1,2,Obstacle,3:4,10,19,accepted,,\"close road at cell (3, 4)\"\n") != std::string::npos);
  CHECK(text.find("rejected,\"infeasible routing: region 5, fully flooded\",reroute traffic around region 5") !=
        std::string::npos);
}

}

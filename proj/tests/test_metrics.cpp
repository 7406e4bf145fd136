#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "floodsim/metrics.hpp"
#include "floodsim/rng.hpp"

using namespace floodsim;
using namespace floodsim::metrics;

namespace {

world::WorldState tiled(const std::vector<double>& region_depths) {
  world::WorldState ws(4, 4, 4);
  for (int i = 0; i < static_cast<int>(ws.size()); ++i) {
    ws.set_road(ws.coord(i), true);
    ws.cell(i).water_depth = region_depths[static_cast<std::size_t>(ws.cell(i).region_id)];
  }
  return ws;
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::IoError;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("sigmoid indices") {
  const std::vector<double> three{0.0, 1.0, 2.0};
  const auto idx = sigmoid_index(three);
  REQUIRE(idx.per_region.size() == 3);
  CHECK(idx.per_region[0] == doctest::Approx(0.2271).epsilon(1e-3));
  CHECK(idx.per_region[1] == doctest::Approx(0.5));
  CHECK(idx.per_region[2] == doctest::Approx(0.7729).epsilon(1e-3));
  CHECK(idx.mean == doctest::Approx(0.5).epsilon(1e-12));

  const std::vector<double> flat{0.3, 0.3, 0.3};
  CHECK(sigmoid_index(flat).mean == 0.5);
  const std::vector<double> zeros{0.0, 0.0};
  CHECK(sigmoid_index(zeros).mean == 0.5);
  const std::vector<double> two{0.0, 10.0};
  CHECK(sigmoid_index(two).mean == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("flood and congestion indices read regions") {
  CHECK(flood_index(tiled({0.2, 0.2, 0.2, 0.2})).mean == 0.5);
  const auto spike = flood_index(tiled({0.1, 0.1, 0.1, 1e6}));
  CHECK(spike.per_region[3] > 0.8);
  for (double v : spike.per_region) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  auto ws = tiled({0, 0, 0, 0});
  CHECK(congestion_index(ws).mean == 0.5);
  for (int i = 0; i < static_cast<int>(ws.size()); ++i) ws.cell(i).car_density = 2.0;
  CHECK(congestion_index(ws).mean == 0.5);
}

TEST_CASE("raising one region never lowers its index") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(6);
    for (auto& x : v) x = rng.uniform(0.0, 1.0);
    const auto k = static_cast<std::size_t>(rng.below(v.size()));
    const double before = sigmoid_index(v).per_region[k];
    v[k] += rng.uniform(0.0, 0.5);
    CHECK(sigmoid_index(v).per_region[k] >= before - 1e-12);
  }
}

TEST_CASE("trip rates") {
  TripCounts all_on_time{10, 0, 10, 0, 0, 0};
  CHECK(trip_rates(all_on_time).c == 0.0);
  CHECK(trip_rates(all_on_time).r == 1.0);
  TripCounts mixed{10, 2, 3, 0, 5, 0};
  CHECK(trip_rates(mixed).c == doctest::Approx(0.2));
  CHECK(trip_rates(mixed).r == doctest::Approx(0.3));
  TripCounts all_cancelled{4, 4, 0, 0, 0, 0};
  CHECK(trip_rates(all_cancelled).c == 1.0);
  CHECK(trip_rates(all_cancelled).r == 0.0);
  CHECK(kind_of([] { trip_rates(TripCounts{}); }) == ErrorKind::UndefinedRates);
}

TEST_CASE("objective") {
  const WeightVector w;
  CHECK(objective_j(0, 0, 0, 1, w) == 0.0);
  CHECK(objective_j(1, 1, 1, 0, w) == doctest::Approx(1.0));
  CHECK(objective_j(0.5, 0.5, 0.2, 0.8, w) == doctest::Approx(0.38));
  CHECK(kind_of([] { objective_j(0, 0, 0, 0, WeightVector{0.5, 0.5, 0.5, 0.0}); }) == ErrorKind::InvalidWeights);
  CHECK(kind_of([] { objective_j(0, 0, 0, 0, WeightVector{1.2, -0.2, 0.0, 0.0}); }) == ErrorKind::InvalidWeights);
}

TEST_CASE("rescaled weights keep the argmin") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    WeightVector w{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const double s = w.flood + w.congestion + w.cancellation + w.arrival;
    const double scale = rng.uniform(0.5, 3.0);
    WeightVector scaled{w.flood * scale, w.congestion * scale, w.cancellation * scale, w.arrival * scale};
    const double ss = s * scale;
    WeightVector a{w.flood / s, w.congestion / s, w.cancellation / s, w.arrival / s};
    WeightVector b{scaled.flood / ss, scaled.congestion / ss, scaled.cancellation / ss, scaled.arrival / ss};
    std::vector<MetricsSnapshot> cands(8);
    for (auto& c : cands) {
      c.f = rng.uniform();
      c.t = rng.uniform();
      c.c = rng.uniform(0.0, 0.5);
      c.r = rng.uniform(0.0, 0.5);
    }
    auto argmin = [&](const WeightVector& wv) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < cands.size(); ++i)
        if (objective_j(cands[i].f, cands[i].t, cands[i].c, cands[i].r, wv) <
            objective_j(cands[best].f, cands[best].t, cands[best].c, cands[best].r, wv))
          best = i;
      return best;
    };
    CHECK(argmin(a) == argmin(b));
  }
}

TEST_CASE("gaps") {
  const std::vector<double> h{0.50, 0.40, 0.45};
  CHECK(objective_gap(h, 0.45) == doctest::Approx(0.05));
  CHECK(objective_gap(h, 0.40) == 0.0);
  CHECK(objective_gap(h, 0.35) == doctest::Approx(-0.05));
  CHECK(objective_gap({}, 0.9) == 0.0);
}

TEST_CASE("running best matches the min-scan definition") {
  Rng rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    FeedbackWindow window(10);
    std::vector<double> history;
    const int n = 1 + static_cast<int>(rng.below(40));
    for (int i = 0; i < n; ++i) {
      MetricsSnapshot s;
      s.J = rng.uniform();
      const double incremental = window.empty() ? 0.0 : s.J - window.best();
      REQUIRE(incremental == objective_gap(history, s.J));
      window.push(s, incremental);
      history.push_back(s.J);
    }
    CHECK(window.best() == *std::min_element(history.begin(), history.end()));
    CHECK(window.size() == std::min<std::size_t>(10, history.size()));
    CHECK(window.history() == history);
  }
}

TEST_CASE("window keeps the last L cycles") {
  FeedbackWindow window(3);
  for (int i = 0; i < 5; ++i) {
    MetricsSnapshot s;
    s.J = 0.1 * (5 - i);
    s.step = i;
    window.push(s, 0.01 * i);
  }
  CHECK(window.size() == 3);
  CHECK(window.snapshots().front().step == 2);
  CHECK(window.window_values(ThresholdStat::Gap) == std::vector<double>{0.02, 0.03, 0.04});
  CHECK(window.window_values(ThresholdStat::J).size() == 3);
  CHECK(window.best() == doctest::Approx(0.1));
}

TEST_CASE("adaptive threshold") {
  for (double g : {0.0, 0.01, 0.05}) {
    const std::vector<double> same(5, g);
    CHECK(adaptive_threshold(same, 1.0) == doctest::Approx(std::max(g, 0.015)));
  }
  const std::vector<double> two{0.0, 0.02};
  CHECK(adaptive_threshold(two, 1.0) == doctest::Approx(0.02));
  const std::vector<double> one{0.3};
  CHECK(adaptive_threshold(one, 1.0) == 0.015);
  CHECK(adaptive_threshold({}, 1.0) == 0.015);
  CHECK(parse_threshold_stat("j") == ThresholdStat::J);
  CHECK(parse_threshold_stat(to_string(ThresholdStat::Gap)) == ThresholdStat::Gap);
}

TEST_CASE("execution deviation") {
  const MetricMap plan{{"f", 1.0}, {"r", 0.4}};
  CHECK(execution_deviation(plan, plan) == 0.0);
  CHECK(execution_deviation({{"a", 0.0}, {"b", 0.0}}, {{"a", 1.0}, {"b", 1.0}}) == doctest::Approx(1.0));
  CHECK(execution_deviation(plan, {{"f", 0.9}, {"r", 0.6}}) == doctest::Approx(std::sqrt(0.025)));
  CHECK(execution_deviation(plan, {{"f", 0.9}, {"r", 0.6}}) == doctest::Approx(0.1581).epsilon(1e-3));
  CHECK(kind_of([&] { execution_deviation(plan, {{"f", 1.0}}); }) == ErrorKind::MetricSetMismatch);
  CHECK(kind_of([&] { execution_deviation(plan, {{"f", 1.0}, {"t", 0.4}}); }) == ErrorKind::MetricSetMismatch);
  CHECK(to_metric_map(MetricsSnapshot{}).size() >= 4);
}

TEST_CASE("stability across runs") {
  auto run_of = [](double v, int n) {
    std::vector<MetricsSnapshot> run(static_cast<std::size_t>(n));
    for (auto& s : run) s.f = s.t = s.c = s.r = s.J = v;
    return run;
  };
  const auto same = run_stability({run_of(0.3, 4), run_of(0.3, 7)});
  CHECK(same.J == 0.0);
  CHECK(same.mean_fctr() == 0.0);
  const auto spread = run_stability({run_of(0.4, 5), run_of(0.6, 5)});
  CHECK(spread.f == doctest::Approx(0.01));
  CHECK(spread.J == doctest::Approx(0.01));

  Rng rng(3);
  std::vector<std::vector<MetricsSnapshot>> runs;
  for (int i = 0; i < 6; ++i) runs.push_back(run_of(rng.uniform(), 1 + static_cast<int>(rng.below(5))));
  const auto base = run_stability(runs);
  std::reverse(runs.begin(), runs.end());
  std::swap(runs[0], runs[3]);
  const auto permuted = run_stability(runs);
  CHECK(permuted.J == doctest::Approx(base.J).epsilon(1e-12));
  CHECK(permuted.r == doctest::Approx(base.r).epsilon(1e-12));

  CHECK(kind_of([&] { run_stability({run_of(0.1, 3)}); }) == ErrorKind::InsufficientRuns);
}

}

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <cmath>
#include <thread>

#include "floodsim/metrics.hpp"
#include "floodsim/policy.hpp"

using namespace floodsim;
using namespace floodsim::policy;

namespace {

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

std::vector<double> random_probs(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& x : p) s += x = std::pow(rng.uniform(), 1.0 + 3.0 * rng.uniform());
  for (auto& x : p) x /= s;
  return p;
}

PolicyDistribution uniform_reroute(int n) {
  PolicyDistribution d;
  for (int r = 0; r < n; ++r) d.support.push_back({Verb::RerouteRegion, r});
  d.probs.assign(static_cast<std::size_t>(n), 1.0 / n);
  return d;
}

// Holds what a PolicyRequest points at.
struct RequestFixture {
  knowledge::StateSummary state;
  knowledge::HybridPrompt prompt;
  ActionVocabulary vocab{4};

  RequestFixture() {
    prompt.state = "state";
    prompt.task = "plan";
  }
  PolicyRequest request(double tau = 1.2) { return PolicyRequest{prompt, state, vocab, tau, 0}; }
};

// 8x8 city split into four tiles with only tile 0 under water.
world::WorldState one_flooded_tile() {
  world::WorldState ws(8, 8, 4);
  for (int i = 0; i < static_cast<int>(ws.size()); ++i) {
    ws.set_road(ws.coord(i), true);
    ws.cell(i).water_depth = ws.cell(i).region_id == 0 ? 0.5 : 0.01;
  }
  return ws;
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("entropy") {
  const std::vector<double> u4(4, 0.25);
  CHECK(entropy(u4) == doctest::Approx(std::log(4.0)));
  const std::vector<double> det{0.0, 1.0, 0.0};
  CHECK(entropy(det) == 0.0);
  const std::vector<double> mixed{0.5, 0.25, 0.25};
  CHECK(entropy(mixed) == doctest::Approx(1.0397).epsilon(1e-4));
  const std::vector<double> bad{0.5, 0.6};
  CHECK(kind_of([&] { entropy(bad); }) == ErrorKind::InvalidDistribution);
  const std::vector<double> negative{1.5, -0.5};
  CHECK(kind_of([&] { entropy(negative); }) == ErrorKind::InvalidDistribution);
  PolicyDistribution dup{{{Verb::NoOp, 0}, {Verb::NoOp, 0}}, {0.5, 0.5}};
  CHECK(kind_of([&] { dup.validate(); }) == ErrorKind::InvalidDistribution);

  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_probs(rng, 1 + rng.below(30));
    const double h = entropy(p);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(p.size())) + 1e-12);
  }
}

TEST_CASE("conditional entropy") {
  const HighLevelAction a{Verb::RerouteRegion, 0}, b{Verb::CloseRoad, 1};
  const PolicyDistribution half{{a, b}, {0.5, 0.5}};
  std::map<HighLevelAction, std::vector<double>> det{{a, {1.0}}, {b, {0.0, 1.0}}};
  CHECK(conditional_entropy(det, half) == 0.0);

  // Two-point distribution with entropy h (h < ln 2).
  auto two_point = [](double h) {
    double lo = 0.0, hi = 0.5;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      const std::vector<double> p{mid, 1.0 - mid};
      (entropy(p) < h ? lo : hi) = mid;
    }
    return std::vector<double>{lo, 1.0 - lo};
  };
  const std::vector<double> three(3, 1.0 / 3.0);
  std::map<HighLevelAction, std::vector<double>> locals{{a, three}, {b, two_point(0.5)}};
  CHECK(conditional_entropy(locals, PolicyDistribution::deterministic(a)) == doctest::Approx(std::log(3.0)));

  // Three-outcome distribution with entropy of exactly 1.0 nat.
  double lo = 0.0, hi = 1.0 / 3.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const std::vector<double> p{mid, (1.0 - mid) / 2.0, (1.0 - mid) / 2.0};
    (entropy(p) < 1.0 ? lo : hi) = mid;
  }
  locals[a] = {lo, (1.0 - lo) / 2.0, (1.0 - lo) / 2.0};
  CHECK(conditional_entropy(locals, half) == doctest::Approx(0.75).epsilon(1e-9));

  std::map<HighLevelAction, std::vector<double>> missing{{a, {1.0}}};
  CHECK(kind_of([&] { conditional_entropy(missing, half); }) == ErrorKind::MissingLocalPolicy);
}

TEST_CASE("entropy projection") {
  const std::vector<double> u8(8, 0.125);
  CHECK(entropy(u8) == doctest::Approx(2.0794).epsilon(1e-4));
  const auto p = project_entropy(u8, 1.2, 0);
  const double h = entropy(p);
  CHECK(h >= 1.1999);
  CHECK(h <= 1.2);
  CHECK(std::max_element(p.begin(), p.end()) - p.begin() == 0);

  const std::vector<double> low{0.9, 0.05, 0.05};
  CHECK(project_entropy(low, 1.2, 0) == low);
  const std::vector<double> det{0.0, 1.0};
  CHECK(project_entropy(det, 0.3, 1) == det);

  // Mixing toward the one-hot lowers entropy monotonically.
  double prev = entropy(u8);
  for (int k = 1; k <= 20; ++k) {
    const double beta = k / 20.0;
    std::vector<double> m(8);
    for (std::size_t i = 0; i < 8; ++i) m[i] = (1.0 - beta) * 0.125 + (i == 0 ? beta : 0.0);
    const double hk = entropy(m);
    CHECK(hk <= prev + 1e-12);
    prev = hk;
  }

  Rng rng(42);
  for (int i = 0; i < 1000; ++i) {
    PolicyDistribution d;
    const auto n = 2 + rng.below(40);
    for (std::size_t k = 0; k < n; ++k) d.support.push_back({static_cast<Verb>(k % 4), static_cast<int>(k / 4)});
    d.probs = random_probs(rng, n);
    for (double tau : {0.3, 0.8, 1.2}) {
      const auto out = project_entropy(d, tau);
      CHECK(entropy(out) <= tau + 1e-4);
      CHECK(out.argmax() == d.argmax());
      CHECK_NOTHROW(out.validate());
    }
  }
}

TEST_CASE("loss and lambda") {
  CHECK(entropy_loss(-1.0, 1.2, 1.2, 3.0) == -1.0);
  CHECK(entropy_loss(-0.7, 2.0, 1.2, 0.0) == -0.7);
  CHECK(entropy_loss(-1.0, 1.4, 1.2, 1.0) == doctest::Approx(-1.2));
  CHECK(update_lambda(0.7, 0.05, 1.2, 1.2) == 0.7);
  CHECK(update_lambda(1.0, 0.05, 1.4, 1.2) == doctest::Approx(1.01));
  CHECK(update_lambda(0.01, 0.05, 0.0, 1.2) == 0.0);

  double lambda = 1.0;
  for (int k = 1; k <= 50; ++k) {
    lambda = update_lambda(lambda, 0.05, 1.6, 1.2);
    CHECK(lambda == doctest::Approx(1.0 + k * 0.05 * 0.4));
  }
  lambda = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double next = update_lambda(lambda, 0.05, 0.2, 1.2);
    CHECK(next == doctest::Approx(std::max(0.0, 1.0 - k * 0.05)));
    lambda = next;
  }
  CHECK(lambda == 0.0);

  CHECK(kind_of([] { EntropyController{0.0, 1.0, 0.05}.validate(); }) == ErrorKind::ConfigError);
  CHECK(kind_of([] { EntropyController{1.2, 1.0, 1.5}.validate(); }) == ErrorKind::ConfigError);
  CHECK_NOTHROW(EntropyController{}.validate());
}

TEST_CASE("vocabulary indexing") {
  const ActionVocabulary v(64);
  CHECK(v.size() == 320);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.index(v.action(i)) == i);
  CHECK(parse_verb(to_string(Verb::DispatchRelief)) == Verb::DispatchRelief);
}

TEST_CASE("Empty backend") {
  RequestFixture fx;
  EmptyBackend empty;
  EntropyController ctl;
  Rng rng(3);
  const auto g = generate_global(fx.request(), empty, ctl, rng, true, 8);
  CHECK(g.projected_entropy == 0.0);
  CHECK(g.raw_entropy == 0.0);
  REQUIRE(g.actions.size() == 4);
  for (const auto& a : g.actions) CHECK(a.verb == Verb::NoOp);
}

TEST_CASE("Scripted backend is deterministic") {
  RequestFixture fx;
  auto run = [&] {
    ScriptedBackend backend(default_script(4));
    EntropyController ctl;
    Rng rng(77);
    std::vector<std::vector<HighLevelAction>> out;
    for (int c = 0; c < 5; ++c) out.push_back(generate_global(fx.request(), backend, ctl, rng, true, 6).actions);
    return out;
  };
  CHECK(run() == run());

  ScriptedBackend backend(default_script(4));
  EntropyController ctl;
  Rng rng(7);
  const auto g = generate_global(fx.request(), backend, ctl, rng, true, 6);
  CHECK(g.raw_entropy == doctest::Approx(std::log(8.0)));
  CHECK(g.projected_entropy <= 1.2 + 1e-4);
  CHECK(g.lambda_after == doctest::Approx(1.0 + 0.05 * (std::log(8.0) - 1.2)));
  CHECK(g.loss <= 0.0);

  EntropyController free_ctl;
  const auto unbounded = generate_global(fx.request(), backend, free_ctl, rng, false, 6);
  CHECK(unbounded.projected_entropy > 1.2);
  CHECK(free_ctl.lambda == 1.0);

  ScriptStep fail;
  fail.fail = true;
  ScriptedBackend failing({fail});
  CHECK(kind_of([&] { failing.generate(fx.request()); }) == ErrorKind::BackendUnavailable);
}

TEST_CASE("Ruled backend concentrates on the flooded region") {
  const auto ws = one_flooded_tile();
  RequestFixture fx;
  fx.state.flood_by_region = metrics::flood_index(ws).per_region;
  fx.state.congestion_by_region = metrics::congestion_index(ws).per_region;
  for (int r = 0; r < 4; ++r) {
    const auto obs = observe_region(ws, r, 0.3);
    fx.state.blocked_by_region.push_back(static_cast<double>(obs.flooded_roads.size()) / obs.road_cells);
  }
  REQUIRE(fx.state.flood_by_region[0] > 0.7);
  for (int r = 1; r < 4; ++r) REQUIRE(fx.state.flood_by_region[static_cast<std::size_t>(r)] < 0.7);

  RuledBackend ruled;
  const auto dist = ruled.generate(fx.request()).distribution;
  double on_target = 0.0, reroute_close = 0.0;
  for (std::size_t i = 0; i < dist.support.size(); ++i) {
    const auto& a = dist.support[i];
    if (a.region == 0) on_target += dist.probs[i];
    if (a.region == 0 && (a.verb == Verb::RerouteRegion || a.verb == Verb::CloseRoad)) reroute_close += dist.probs[i];
  }
  CHECK(on_target == doctest::Approx(1.0));
  CHECK(reroute_close >= 0.7);
  CHECK(dist.support[dist.argmax()] == HighLevelAction{Verb::RerouteRegion, 0});

  RequestFixture calm;
  calm.state.flood_by_region.assign(4, 0.5);
  const auto none = ruled.generate(calm.request()).distribution;
  CHECK(none.support == std::vector<HighLevelAction>{{Verb::NoOp, 0}});
}

TEST_CASE("action sampling") {
  Rng rng(5);
  const auto acts = sample_actions(uniform_reroute(4), 4, 200, rng);
  for (int r = 0; r < 4; ++r) CHECK(acts[static_cast<std::size_t>(r)] == HighLevelAction{Verb::RerouteRegion, r});
  const auto none = sample_actions(PolicyDistribution::deterministic({Verb::NoOp, 2}), 4, 10, rng);
  for (const auto& a : none) CHECK(a.verb == Verb::NoOp);
}

TEST_CASE("regional refinement") {
  auto ws = one_flooded_tile();
  Rng rng(9);

  SUBCASE("NoOp refines to nothing") {
    const auto plan = generate_regional({Verb::NoOp, 1}, observe_region(ws, 1, 0.3), 4, 1.2, 4, rng);
    CHECK(plan.directives.empty());
    CHECK(plan.probs.empty());
    CHECK(plan.provenance == HighLevelAction{Verb::NoOp, 1});
  }

  SUBCASE("deterministic parent forces a deterministic local policy") {
    for (Verb v : {Verb::RerouteRegion, Verb::CloseRoad, Verb::HoldTransit, Verb::DispatchRelief}) {
      const auto plan = generate_regional({v, 0}, observe_region(ws, 0, 0.3), 4, 0.0, 4, rng);
      REQUIRE_FALSE(plan.probs.empty());
      CHECK(entropy(plan.probs) == 0.0);
      CHECK(plan.directives.size() == 1);
    }
  }

  SUBCASE("closing the only flooded cell names it") {
    for (int i = 0; i < static_cast<int>(ws.size()); ++i) ws.cell(i).water_depth = 0.0;
    ws.cell(GridCoord{6, 5}).water_depth = 0.45;
    const int region = ws.cell(GridCoord{6, 5}).region_id;
    const auto obs = observe_region(ws, region, 0.3);
    REQUIRE(obs.flooded_roads.size() == 1);
    const auto plan = generate_regional({Verb::CloseRoad, region}, obs, 4, 1.2, 4, rng);
    CHECK(plan.directives == std::vector<std::string>{"close road at cell (6, 5)"});
  }

  SUBCASE("unknown region") {
    CHECK(kind_of([&] { generate_regional({Verb::CloseRoad, 4}, observe_region(ws, 0, 0.3), 4, 1.2, 1, rng); }) ==
          ErrorKind::UnknownRegion);
    CHECK(kind_of([&] {
            generate_regional({Verb::CloseRoad, -1}, observe_region(ws, 0, 0.3), 4, 1.2, 1, rng);
          }) == ErrorKind::UnknownRegion);
  }

  SUBCASE("constraint chain holds after generation") {
    RequestFixture fx;
    for (int trial = 0; trial < 50; ++trial) {
      PolicyDistribution d;
      for (int r = 0; r < 4; ++r)
        for (Verb v : {Verb::RerouteRegion, Verb::CloseRoad, Verb::HoldTransit, Verb::DispatchRelief})
          d.support.push_back({v, r});
      d.probs = random_probs(rng, d.support.size());
      ScriptedBackend backend({ScriptStep{d, std::nullopt, false}});
      EntropyController ctl;
      const auto g = generate_global(fx.request(), backend, ctl, rng, true, 8);
      const double bound = std::min(g.projected_entropy, ctl.tau);
      std::map<HighLevelAction, std::vector<double>> locals;
      for (const auto& a : g.projected.support) locals[a] = refine(a, observe_region(ws, a.region, 0.3), bound).probs;
      CHECK(g.projected_entropy <= ctl.tau + 1e-4);
      CHECK(conditional_entropy(locals, g.projected) <= g.projected_entropy + 1e-6);
    }
  }
}

TEST_CASE("response decoding") {
  const ActionVocabulary v(2);
  std::vector<double> probs(10, 0.0);
  probs[3] = 0.75;
  probs[7] = 0.25;
  const auto r = decode_response(nlohmann::json({{"probs", probs}}).dump(), v);
  REQUIRE(r.distribution.support.size() == 2);
  CHECK(r.distribution.support[0] == v.action(3));
  CHECK(r.distribution.probs[0] == 0.75);
  CHECK_FALSE(r.forecast);

  const auto ranked = decode_response(R"({"ranked": [4, 1], "forecast": {"f": 0.4, "t": 0.5, "c": 0.1, "r": 0.8}})", v);
  REQUIRE(ranked.distribution.support.size() == 2);
  const auto& rd = ranked.distribution;
  CHECK(rd.support[rd.argmax()] == v.action(4));
  CHECK(rd.probs[1 - rd.argmax()] == doctest::Approx(std::exp(-1.0) / (1.0 + std::exp(-1.0))));
  REQUIRE(ranked.forecast);
  CHECK(ranked.forecast->at("r") == 0.8);

  for (const char* bad : {"not json", "{}", R"({"probs": [1.0]})", R"({"ranked": []})", R"({"ranked": [99]})",
                          R"({"ranked": [1, 1]})", R"({"probs": [0.5,0.5,0.5,0,0,0,0,0,0,0]})"})
    CHECK(kind_of([&] { decode_response(bad, v); }) == ErrorKind::BackendUnavailable);
}

TEST_CASE("External backend over HTTP") {
  httplib::Server server;
  std::string last_body;
  server.Post("/plan", [&](const httplib::Request& req, httplib::Response& res) {
    last_body = req.body;
    res.set_content(R"({"ranked": [2, 0]})", "application/json");
  });
  server.Post("/slow", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    res.set_content(R"({"ranked": [0]})", "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RequestFixture fx;
  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  ExternalBackend ok({base + "/plan", std::chrono::milliseconds(2000)});
  const auto resp = ok.generate(fx.request(0.9));
  CHECK(resp.distribution.support[resp.distribution.argmax()] == fx.vocab.action(2));
  const auto sent = nlohmann::json::parse(last_body);
  CHECK(sent.at("tau") == 0.9);
  CHECK(sent.at("vocabulary").size() == fx.vocab.size());
  CHECK(sent.at("prompt").get<std::string>() == fx.prompt.serialize());

  ExternalBackend slow({base + "/slow", std::chrono::milliseconds(150)});
  CHECK(kind_of([&] { slow.generate(fx.request()); }) == ErrorKind::BackendUnavailable);
  ExternalBackend broken({base + "/broken", std::chrono::milliseconds(1000)});
  CHECK(kind_of([&] { broken.generate(fx.request()); }) == ErrorKind::BackendUnavailable);
  ExternalBackend unset({"", std::chrono::milliseconds(100)});
  CHECK(kind_of([&] { unset.generate(fx.request()); }) == ErrorKind::BackendUnavailable);

  server.stop();
  worker.join();
  ExternalBackend gone({base + "/plan", std::chrono::milliseconds(300)});
  CHECK(kind_of([&] { gone.generate(fx.request()); }) == ErrorKind::BackendUnavailable);
}

}

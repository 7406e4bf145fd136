#include "floodsim/harness.hpp"

#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "floodsim/format.hpp"
#include "floodsim/rng.hpp"

namespace floodsim::harness {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Empty: return "Empty";
    case Strategy::Ruled: return "Ruled";
    case Strategy::Scripted: return "Scripted";
    case Strategy::External: return "External";
  }
  return "Empty";
}

Strategy parse_strategy(std::string_view text) {
  for (auto s : {Strategy::Empty, Strategy::Ruled, Strategy::Scripted, Strategy::External}) {
    const auto name = to_string(s);
    if (name.size() == text.size() &&
        std::equal(name.begin(), name.end(), text.begin(), [](char a, char b) { return std::tolower(a) == std::tolower(b); }))
      return s;
  }
  throw Error(ErrorKind::ConfigError, "unknown strategy '" + std::string(text) + "'", "strategy");
}

void enable_ablation(feedback::Ablations& a, std::string_view name) {
  if (name == "dual_indexing")
    a.dual_indexing = true;
  else if (name == "entropy_control")
    a.entropy_control = true;
  else if (name == "feedback_loop")
    a.feedback_loop = true;
  else
    throw Error(ErrorKind::ConfigError, "unknown ablation '" + std::string(name) + "'", "ablations");
}

std::vector<std::string> ablation_names(const feedback::Ablations& a) {
  std::vector<std::string> out;
  if (a.dual_indexing) out.push_back("dual_indexing");
  if (a.entropy_control) out.push_back("entropy_control");
  if (a.feedback_loop) out.push_back("feedback_loop");
  return out;
}

std::string ablation_label(const feedback::Ablations& a) {
  const auto names = ablation_names(a);
  if (names.empty()) return "full";
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : "+") + n;
  return out;
}

namespace {

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw Error(ErrorKind::ConfigError, message, field);
}

// Reads one JSON object, tracking consumed keys so leftovers can be reported.
class Section {
public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j_.is_object(), path_.empty() ? "config" : path_, "expected an object");
  }

  template <class T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      target = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ConfigError, std::string("wrong type: ") + e.what(), field(key));
    }
  }

  std::optional<Section> sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), field(key));
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw Error(ErrorKind::ConfigError, "unknown field", field(k));
  }

private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

bool is_perfect_square(int n) {
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  return n >= 1 && k * k == n;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : sep) + s;
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + '"';
}

json metric_map_json(const metrics::MetricMap& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

json snapshot_json(const metrics::MetricsSnapshot& s) {
  return {{"step", s.step}, {"f", s.f}, {"t", s.t}, {"c", s.c}, {"r", s.r}, {"J", s.J}};
}

json cycle_json(const feedback::CycleReport& c) {
  return {{"cycle", c.cycle},
          {"start_step", c.start_step},
          {"end_step", c.end_step},
          {"snapshot", snapshot_json(c.snapshot)},
          {"gap", c.gap},
          {"delta", c.delta},
          {"triggered", c.triggered},
          {"delta_e", c.delta_e},
          {"planned", metric_map_json(c.planned)},
          {"executed", metric_map_json(c.executed)},
          {"backend", c.backend},
          {"fallback", c.fallback},
          {"fallback_reason", c.fallback_reason},
          {"prompt", c.prompt},
          {"prompt_has_feedback", c.prompt_has_feedback},
          {"raw_entropy", c.raw_entropy},
          {"projected_entropy", c.projected_entropy},
          {"conditional_entropy", c.conditional_entropy},
          {"lambda_before", c.lambda_before},
          {"lambda_after", c.lambda_after},
          {"loss", c.loss},
          {"actions", c.actions},
          {"directives", c.directives},
          {"accepted", c.accepted},
          {"rejected", c.rejected},
          {"agents",
           {{"items", c.agents.items},
            {"advanced", c.agents.advanced},
            {"blocked", c.agents.blocked},
            {"cancelled", c.agents.cancelled},
            {"arrived", c.agents.arrived},
            {"replanned", c.agents.replanned},
            {"max_depth", c.agents.max_depth},
            {"max_density", c.agents.max_density}}},
          {"consistency_responses", c.consistency_responses},
          {"diversity_responses", c.diversity_responses}};
}

}  // namespace

void validate(const RunConfig& c) {
  require(c.steps >= 10, "scenario.steps", "horizon must be at least 10 steps");
  require(c.world.width >= 1 && c.world.height >= 1, "world.width", "grid must be non-empty");
  require(is_perfect_square(c.world.n_regions), "world.n_regions", "region count must be a perfect square");
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(c.world.n_regions))));
  require(k <= c.world.width && k <= c.world.height, "world.n_regions", "more region tiles than grid cells per side");
  require(c.world.road_spacing >= 1, "world.road_spacing", "must be >= 1");
  require(c.world.terrain_scale >= 1, "world.terrain_scale", "must be >= 1");
  require(c.world.elevation_relief >= 0.0, "world.elevation_relief", "must be >= 0");
  require(c.world.block_rise >= 0.0, "world.block_rise", "must be >= 0");
  require(c.world.roughness >= 0.0, "world.roughness", "must be >= 0");
  const auto& h = c.world.hydrology;
  require(h.inflow >= 0.0 && h.inflow <= 1.0, "hydrology.inflow", "must be in [0, 1]");
  require(h.drainage >= 0.0 && h.drainage <= 1.0, "hydrology.drainage", "must be in [0, 1]");
  require(h.diffusion >= 0.0 && h.diffusion <= 1.0, "hydrology.diffusion", "must be in [0, 1]");
  const auto& m = c.mobility;
  require(m.resident_block_depth > 0.0, "mobility.resident_block_depth", "must be > 0");
  require(m.bus_block_depth > 0.0, "mobility.bus_block_depth", "must be > 0");
  require(m.patience_factor > 0.0, "mobility.patience_factor", "must be > 0");
  require(m.patience_cap >= 1, "mobility.patience_cap", "must be >= 1");
  require(m.detour_wait_probability >= 0.0 && m.detour_wait_probability <= 1.0, "mobility.detour_wait_probability",
          "must be in [0, 1]");
  require(m.on_time_factor >= 1.0, "mobility.on_time_factor", "must be >= 1");
  require(m.perception_radius >= 0, "mobility.perception_radius", "must be >= 0");
  const auto& p = c.population;
  require(p.initial_agents >= 0, "population.initial_agents", "must be >= 0");
  require(p.initial_departure_spread >= 0, "population.initial_departure_spread", "must be >= 0");
  require(p.spawn_rate >= 0.0, "population.spawn_rate", "must be >= 0");
  require(p.initial_agents > 0 || p.spawn_rate > 0.0, "population.initial_agents", "no demand at all");
  require(p.origin_jitter >= 0, "population.origin_jitter", "must be >= 0");
  require(p.trip_scale >= 0.0, "population.trip_scale", "must be >= 0");
  require(p.trip_window >= 0, "population.trip_window", "must be >= 0");
  require(p.poi_count >= 1, "population.poi_count", "must be >= 1");
  require(p.bus_lines >= 0, "population.bus_lines", "must be >= 0");
  require(p.stops_per_line >= 1, "population.stops_per_line", "must be >= 1");
  require(p.bus_headway >= 0, "population.bus_headway", "must be >= 0");
  try {
    c.weights.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, e.what(), "metrics.weights");
  }
  c.entropy.validate();
  const auto& cy = c.cycle;
  require(cy.window >= 1, "metrics.feedback_window", "must be >= 1");
  require(cy.delta_floor >= 0.0, "metrics.delta_floor", "must be >= 0");
  require(cy.lambda_thr >= 0.0, "metrics.lambda_thr", "must be >= 0");
  require(cy.global_draws >= 1, "policy.global_draws", "must be >= 1");
  require(cy.regional_draws >= 1, "policy.regional_draws", "must be >= 1");
  require(cy.hops >= 0, "knowledge.hops", "must be >= 0");
  require(cy.top_k >= 1, "knowledge.top_k", "must be >= 1");
  require(cy.cycle_len >= 1, "feedback.cycle_len", "must be >= 1");
  require(cy.consistency_samples >= 2, "feedback.consistency_samples", "must be >= 2");
  require(!cy.task.empty(), "feedback.task", "must be non-empty");
  require(c.relief_multiplier >= 1.0, "translate.relief_multiplier", "must be >= 1");
  require(c.timeout_ms > 0, "policy.timeout_ms", "must be > 0");
  for (int s : c.snapshot_steps) require(s >= 0, "output.snapshot_steps", "steps must be >= 0");
}

json to_json(const RunConfig& c) {
  const auto& h = c.world.hydrology;
  const auto& m = c.mobility;
  const auto& p = c.population;
  const auto& cy = c.cycle;
  return {
      {"scenario", {{"kind", std::string(world::to_string(c.scenario))}, {"steps", c.steps}}},
      {"seed", c.seed},
      {"strategy", std::string(to_string(c.strategy))},
      {"ablations", ablation_names(cy.ablations)},
      {"world",
       {{"width", c.world.width},
        {"height", c.world.height},
        {"n_regions", c.world.n_regions},
        {"road_spacing", c.world.road_spacing},
        {"elevation_relief", c.world.elevation_relief},
        {"terrain_scale", c.world.terrain_scale},
        {"block_rise", c.world.block_rise},
        {"roughness", c.world.roughness}}},
      {"hydrology", {{"inflow", h.inflow}, {"drainage", h.drainage}, {"diffusion", h.diffusion}}},
      {"mobility",
       {{"resident_block_depth", m.resident_block_depth},
        {"bus_block_depth", m.bus_block_depth},
        {"patience_factor", m.patience_factor},
        {"patience_cap", m.patience_cap},
        {"detour_wait_probability", m.detour_wait_probability},
        {"on_time_factor", m.on_time_factor},
        {"perception_radius", m.perception_radius}}},
      {"population",
       {{"initial_agents", p.initial_agents},
        {"initial_departure_spread", p.initial_departure_spread},
        {"spawn_rate", p.spawn_rate},
        {"origin_jitter", p.origin_jitter},
        {"trip_scale", p.trip_scale},
        {"trip_window", p.trip_window},
        {"poi_count", p.poi_count},
        {"bus_lines", p.bus_lines},
        {"stops_per_line", p.stops_per_line},
        {"bus_headway", p.bus_headway}}},
      {"metrics",
       {{"weights", {c.weights.flood, c.weights.congestion, c.weights.cancellation, c.weights.arrival}},
        {"feedback_window", cy.window},
        {"delta_floor", cy.delta_floor},
        {"lambda_thr", cy.lambda_thr},
        {"threshold_stat", metrics::to_string(cy.threshold_stat)}}},
      {"policy",
       {{"tau", c.entropy.tau},
        {"lambda_init", c.entropy.lambda},
        {"alpha", c.entropy.alpha},
        {"global_draws", cy.global_draws},
        {"regional_draws", cy.regional_draws},
        {"script", c.script},
        {"endpoint", c.endpoint},
        {"timeout_ms", c.timeout_ms}}},
      {"knowledge",
       {{"hops", cy.hops},
        {"top_k", cy.top_k},
        {"seed_threshold", cy.seed_threshold},
        {"flood_spot_threshold", cy.flood_spot_threshold}}},
      {"feedback",
       {{"cycle_len", cy.cycle_len},
        {"failure_tolerance", cy.failure_tolerance},
        {"consistency_samples", cy.consistency_samples},
        {"task", cy.task}}},
      {"translate", {{"relief_multiplier", c.relief_multiplier}}},
      {"output", {{"dir", c.out_dir}, {"snapshot_steps", c.snapshot_steps}}},
  };
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  if (auto s = root.sub("scenario")) {
    std::string kind = std::string(world::to_string(c.scenario));
    s->read("kind", kind);
    try {
      c.scenario = world::parse_scenario_kind(kind);
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, e.what(), "scenario.kind");
    }
    s->read("steps", c.steps);
    s->finish();
  }
  root.read("seed", c.seed);
  std::string strategy = std::string(to_string(c.strategy));
  root.read("strategy", strategy);
  c.strategy = parse_strategy(strategy);
  std::vector<std::string> ablations;
  root.read("ablations", ablations);
  for (const auto& a : ablations) enable_ablation(c.cycle.ablations, a);
  if (auto s = root.sub("world")) {
    s->read("width", c.world.width);
    s->read("height", c.world.height);
    s->read("n_regions", c.world.n_regions);
    s->read("road_spacing", c.world.road_spacing);
    s->read("elevation_relief", c.world.elevation_relief);
    s->read("terrain_scale", c.world.terrain_scale);
    s->read("block_rise", c.world.block_rise);
    s->read("roughness", c.world.roughness);
    s->finish();
  }
  if (auto s = root.sub("hydrology")) {
    s->read("inflow", c.world.hydrology.inflow);
    s->read("drainage", c.world.hydrology.drainage);
    s->read("diffusion", c.world.hydrology.diffusion);
    s->finish();
  }
  if (auto s = root.sub("mobility")) {
    auto& m = c.mobility;
    s->read("resident_block_depth", m.resident_block_depth);
    s->read("bus_block_depth", m.bus_block_depth);
    s->read("patience_factor", m.patience_factor);
    s->read("patience_cap", m.patience_cap);
    s->read("detour_wait_probability", m.detour_wait_probability);
    s->read("on_time_factor", m.on_time_factor);
    s->read("perception_radius", m.perception_radius);
    s->finish();
  }
  if (auto s = root.sub("population")) {
    auto& p = c.population;
    s->read("initial_agents", p.initial_agents);
    s->read("initial_departure_spread", p.initial_departure_spread);
    s->read("spawn_rate", p.spawn_rate);
    s->read("origin_jitter", p.origin_jitter);
    s->read("trip_scale", p.trip_scale);
    s->read("trip_window", p.trip_window);
    s->read("poi_count", p.poi_count);
    s->read("bus_lines", p.bus_lines);
    s->read("stops_per_line", p.stops_per_line);
    s->read("bus_headway", p.bus_headway);
    s->finish();
  }
  if (auto s = root.sub("metrics")) {
    if (const json* w = s->raw("weights")) {
      std::vector<double> v;
      try {
        v = w->get<std::vector<double>>();
      } catch (const json::exception& e) {
        throw Error(ErrorKind::ConfigError, e.what(), "metrics.weights");
      }
      require(v.size() == 4, "metrics.weights", "expected four weights");
      c.weights = {v[0], v[1], v[2], v[3]};
    }
    s->read("feedback_window", c.cycle.window);
    s->read("delta_floor", c.cycle.delta_floor);
    s->read("lambda_thr", c.cycle.lambda_thr);
    std::string stat = metrics::to_string(c.cycle.threshold_stat);
    s->read("threshold_stat", stat);
    try {
      c.cycle.threshold_stat = metrics::parse_threshold_stat(stat);
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, e.what(), "metrics.threshold_stat");
    }
    s->finish();
  }
  if (auto s = root.sub("policy")) {
    s->read("tau", c.entropy.tau);
    s->read("lambda_init", c.entropy.lambda);
    s->read("alpha", c.entropy.alpha);
    s->read("global_draws", c.cycle.global_draws);
    s->read("regional_draws", c.cycle.regional_draws);
    s->read("script", c.script);
    s->read("endpoint", c.endpoint);
    s->read("timeout_ms", c.timeout_ms);
    s->finish();
  }
  if (auto s = root.sub("knowledge")) {
    s->read("hops", c.cycle.hops);
    s->read("top_k", c.cycle.top_k);
    s->read("seed_threshold", c.cycle.seed_threshold);
    s->read("flood_spot_threshold", c.cycle.flood_spot_threshold);
    s->finish();
  }
  if (auto s = root.sub("feedback")) {
    s->read("cycle_len", c.cycle.cycle_len);
    s->read("failure_tolerance", c.cycle.failure_tolerance);
    s->read("consistency_samples", c.cycle.consistency_samples);
    s->read("task", c.cycle.task);
    s->finish();
  }
  if (auto s = root.sub("translate")) {
    s->read("relief_multiplier", c.relief_multiplier);
    s->finish();
  }
  if (auto s = root.sub("output")) {
    s->read("dir", c.out_dir);
    s->read("snapshot_steps", c.snapshot_steps);
    s->finish();
  }
  root.finish();
  validate(c);
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open " + path.string(), "config");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, e.what(), "config");
  }
  return config_from_json(j);
}

std::unique_ptr<policy::PolicyBackend> make_backend(const RunConfig& c) {
  switch (c.strategy) {
    case Strategy::Empty: return std::make_unique<policy::EmptyBackend>();
    case Strategy::Ruled: return std::make_unique<policy::RuledBackend>();
    case Strategy::Scripted:
      return std::make_unique<policy::ScriptedBackend>(c.script.empty() ? policy::default_script(c.world.n_regions)
                                                                        : policy::read_script(c.script));
    case Strategy::External: {
      policy::ExternalOptions opts;
      opts.endpoint = c.endpoint;
      if (opts.endpoint.empty())
        if (const char* env = std::getenv("FLOODSIM_BACKEND_URL")) opts.endpoint = env;
      opts.timeout = std::chrono::milliseconds(c.timeout_ms);
      return std::make_unique<policy::ExternalBackend>(opts);
    }
  }
  throw Error(ErrorKind::ConfigError, "unknown strategy", "strategy");
}

std::vector<metrics::MetricsSnapshot> RunResult::snapshots() const {
  std::vector<metrics::MetricsSnapshot> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.snapshot);
  return out;
}

std::vector<semeval::ResponseSet> RunResult::consistency_sets(const knowledge::Embedder& embedder) const {
  std::vector<semeval::ResponseSet> out;
  for (const auto& c : cycles)
    if (c.consistency_responses.size() >= 2)
      out.push_back(semeval::make_response_set("cycle " + std::to_string(c.cycle), c.consistency_responses, embedder));
  return out;
}

std::vector<semeval::ResponseSet> RunResult::diversity_sets(const knowledge::Embedder& embedder) const {
  std::vector<semeval::ResponseSet> out;
  for (const auto& c : cycles)
    if (c.diversity_responses.size() >= 2)
      out.push_back(semeval::make_response_set("cycle " + std::to_string(c.cycle), c.diversity_responses, embedder,
                                               "regional"));
  return out;
}

void write_metrics_csv(std::ostream& out, const RunResult& r) {
  out << "step,rain,f,t,c,r,J,total_water,enroute,cycle,gap,delta,triggered\n";
  std::size_t k = 0;
  for (const auto& s : r.steps) {
    const int step = s.snapshot.step;
    while (k + 1 < r.cycles.size() && step >= r.cycles[k].end_step) ++k;
    out << step << ',' << exact(s.rain) << ',' << exact(s.snapshot.f) << ',' << exact(s.snapshot.t) << ','
        << exact(s.snapshot.c) << ',' << exact(s.snapshot.r) << ',' << exact(s.snapshot.J) << ','
        << exact(s.total_water) << ',' << s.enroute << ',';
    if (k < r.cycles.size()) {
      const auto& c = r.cycles[k];
      out << c.cycle << ',';
      // Trigger fields belong to the cycle's closing step only.
      if (step == c.end_step - 1)
        out << exact(c.gap) << ',' << exact(c.delta) << ',' << (c.triggered ? 1 : 0);
      else
        out << ",,";
    } else {
      out << ",,,";
    }
    out << '\n';
  }
}

void write_cycle_csv(std::ostream& out, const RunResult& r) {
  out << "cycle,start_step,end_step,f,t,c,r,J,gap,delta,triggered,delta_e,backend,fallback,raw_entropy,"
         "projected_entropy,conditional_entropy,lambda_before,lambda_after,loss,accepted,rejected,actions,"
         "prompt_digest,prompt_has_feedback,blocked,cancelled,arrived,replanned,rejected_reasons\n";
  for (const auto& c : r.cycles) {
    out << c.cycle << ',' << c.start_step << ',' << c.end_step << ',' << exact(c.snapshot.f) << ','
        << exact(c.snapshot.t) << ',' << exact(c.snapshot.c) << ',' << exact(c.snapshot.r) << ','
        << exact(c.snapshot.J) << ',' << exact(c.gap) << ',' << exact(c.delta) << ',' << (c.triggered ? 1 : 0) << ','
        << exact(c.delta_e) << ',' << c.backend << ',' << (c.fallback ? 1 : 0) << ',' << exact(c.raw_entropy) << ','
        << exact(c.projected_entropy) << ',' << exact(c.conditional_entropy) << ',' << exact(c.lambda_before) << ','
        << exact(c.lambda_after) << ',' << exact(c.loss) << ',' << c.accepted << ',' << c.rejected.size() << ','
        << csv_field(join(c.actions, ";")) << ',' << hex64(fnv1a(c.prompt)) << ',' << (c.prompt_has_feedback ? 1 : 0)
        << ',' << c.agents.blocked << ',' << c.agents.cancelled << ',' << c.agents.arrived << ','
        << c.agents.replanned << ',' << csv_field(join(c.rejected, ";")) << '\n';
  }
}

json summary_json(const RunResult& r) {
  json cycles = json::array();
  int fallbacks = 0;
  for (const auto& c : r.cycles) {
    cycles.push_back(cycle_json(c));
    fallbacks += c.fallback;
  }
  return {{"config", to_json(r.config)},
          {"horizon", r.config.steps},
          {"cycle_len", r.config.cycle.cycle_len},
          {"cycles", cycles},
          {"means", {{"f", r.means.f}, {"t", r.means.t}, {"c", r.means.c}, {"r", r.means.r}, {"J", r.means.J}}},
          {"j_variance", r.j_variance},
          {"trigger_events", r.trigger_events},
          {"fallback_events", fallbacks}};
}

namespace {

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  body(out);
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace

RunResult run(const RunConfig& config, bool write_artifacts) {
  validate(config);
  RunResult result;
  result.config = config;
  result.scenario = world::generate_scenario(config.scenario, config.steps, substream_seed(config.seed, "scenario"));

  const fs::path dir(config.out_dir);
  if (write_artifacts) fs::create_directories(dir);

  feedback::Simulation sim(config.world, config.mobility, config.population, config.weights, result.scenario,
                           config.seed);
  const std::set<int> snapshot_steps(config.snapshot_steps.begin(), config.snapshot_steps.end());
  if (write_artifacts) {
    sim.set_step_observer([&](const feedback::Simulation& s) {
      const int t = s.step_index() - 1;
      if (snapshot_steps.count(t))
        write_file(dir / ("density_step_" + std::to_string(t) + ".csv"), [&](std::ostream& o) { s.write_density_dump(o); });
    });
  }
  feedback::Orchestrator orchestrator(sim, make_backend(config), config.entropy, config.cycle, config.seed,
                                      config.relief_multiplier);
  result.cycles = orchestrator.run();
  result.steps = sim.steps();
  result.instructions = orchestrator.instruction_log();
  result.trips = sim.trips();

  for (const auto& s : result.steps) {
    result.means.f += s.snapshot.f;
    result.means.t += s.snapshot.t;
    result.means.c += s.snapshot.c;
    result.means.r += s.snapshot.r;
    result.means.J += s.snapshot.J;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, result.steps.size()));
  result.means.f /= n;
  result.means.t /= n;
  result.means.c /= n;
  result.means.r /= n;
  result.means.J /= n;
  for (const auto& s : result.steps) result.j_variance += (s.snapshot.J - result.means.J) * (s.snapshot.J - result.means.J);
  result.j_variance /= n;
  for (const auto& c : result.cycles) result.trigger_events += c.triggered;

  if (write_artifacts) {
    write_file(dir / "metrics.csv", [&](std::ostream& o) { write_metrics_csv(o, result); });
    write_file(dir / "cycles.csv", [&](std::ostream& o) { write_cycle_csv(o, result); });
    write_file(dir / "summary.json", [&](std::ostream& o) { o << summary_json(result).dump(2) << '\n'; });
    write_file(dir / "trips.csv", [&](std::ostream& o) { mobility::write_trip_log(o, result.trips); });
    write_file(dir / "instructions.csv", [&](std::ostream& o) { translate::write_instruction_log(o, result.instructions); });
    write_file(dir / "scenario.jsonl", [&](std::ostream& o) { world::write_scenarios(o, {&result.scenario, 1}); });
  }
  return result;
}

std::vector<MatrixRow> run_matrix(const RunConfig& base, const MatrixSpec& spec) {
  if (spec.repeats < 1) throw Error(ErrorKind::ConfigError, "repeats must be >= 1", "repeats");
  struct Task {
    std::size_t row;
    RunConfig config;
  };
  std::vector<MatrixRow> rows;
  std::vector<Task> tasks;
  for (auto strategy : spec.strategies)
    for (auto scenario : spec.scenarios)
      for (const auto& setting : spec.settings) {
        MatrixRow row;
        row.strategy = strategy;
        row.scenario = scenario;
        row.setting = ablation_label(setting);
        row.runs = spec.repeats;
        for (int k = 0; k < spec.repeats; ++k) {
          RunConfig c = base;
          c.strategy = strategy;
          c.scenario = scenario;
          c.cycle.ablations = setting;
          c.seed = spec.base_seed + static_cast<std::uint64_t>(k);
          c.out_dir = (fs::path(base.out_dir) / (std::string(to_string(strategy)) + "_" +
                                                 std::string(world::to_string(scenario)) + "_" + row.setting + "_s" +
                                                 std::to_string(c.seed)))
                          .string();
          validate(c);
          tasks.push_back({rows.size(), std::move(c)});
        }
        rows.push_back(std::move(row));
      }

  std::vector<std::optional<RunResult>> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
      try {
        results[i] = run(tasks[i].config, spec.write_artifacts);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned n_workers = std::min<unsigned>(spec.workers ? spec.workers : hw, static_cast<unsigned>(tasks.size()));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  const knowledge::HashEmbedder embedder(64);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto& row = rows[r];
    std::vector<const RunResult*> runs;
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (tasks[i].row == r) runs.push_back(&*results[i]);
    const double n = static_cast<double>(runs.size());
    for (const auto* x : runs) {
      row.mean.f += x->means.f / n;
      row.mean.t += x->means.t / n;
      row.mean.c += x->means.c / n;
      row.mean.r += x->means.r / n;
      row.mean.J += x->means.J / n;
      row.within_run_j_variance += x->j_variance / n;
    }
    for (const auto* x : runs) {
      auto sq = [](double v) { return v * v; };
      row.variance.f += sq(x->means.f - row.mean.f) / n;
      row.variance.t += sq(x->means.t - row.mean.t) / n;
      row.variance.c += sq(x->means.c - row.mean.c) / n;
      row.variance.r += sq(x->means.r - row.mean.r) / n;
      row.variance.J += sq(x->means.J - row.mean.J) / n;
    }
    std::vector<semeval::ResponseSet> consistency, diversity;
    for (const auto* x : runs) {
      for (auto& s : x->consistency_sets(embedder)) consistency.push_back(std::move(s));
      for (auto& s : x->diversity_sets(embedder)) diversity.push_back(std::move(s));
    }
    row.semantic.setting = row.setting;
    if (runs.size() >= 2) {
      std::vector<std::vector<metrics::MetricsSnapshot>> series;
      for (const auto* x : runs) series.push_back(x->snapshots());
      row.semantic = semeval::stability_report(row.setting, series, consistency, diversity);
    } else {
      if (!consistency.empty()) row.semantic.scs = semeval::scs(consistency);
      if (!diversity.empty()) row.semantic.sds = semeval::sds(diversity);
    }
  }
  return rows;
}

void write_matrix_csv(std::ostream& out, const std::vector<MatrixRow>& rows) {
  out << "strategy,scenario,setting,runs,mean_J,var_J,mean_f,var_f,mean_t,var_t,mean_c,var_c,mean_r,var_r,"
         "within_run_var_J,stability,scs,sds\n";
  auto opt = [](const std::optional<double>& v) { return v ? exact(*v) : std::string(); };
  for (const auto& r : rows) {
    out << to_string(r.strategy) << ',' << world::to_string(r.scenario) << ',' << r.setting << ',' << r.runs << ','
        << exact(r.mean.J) << ',' << exact(r.variance.J) << ',' << exact(r.mean.f) << ',' << exact(r.variance.f) << ','
        << exact(r.mean.t) << ',' << exact(r.variance.t) << ',' << exact(r.mean.c) << ',' << exact(r.variance.c) << ','
        << exact(r.mean.r) << ',' << exact(r.variance.r) << ',' << exact(r.within_run_j_variance) << ','
        << exact(r.semantic.stability) << ',' << opt(r.semantic.scs) << ',' << opt(r.semantic.sds) << '\n';
  }
}

namespace {

using StageKey = std::function<std::string(const feedback::CycleReport&)>;

const std::vector<std::pair<std::string, StageKey>>& stages() {
  static const std::vector<std::pair<std::string, StageKey>> table{
      {"prompt", [](const auto& c) { return c.prompt; }},
      {"distribution", [](const auto& c) { return c.backend + "|" + exact(c.raw_entropy); }},
      {"post_processing",
       [](const auto& c) {
         return exact(c.projected_entropy) + "|" + exact(c.conditional_entropy) + "|" + exact(c.lambda_before) + "|" +
                exact(c.lambda_after) + "|" + exact(c.loss);
       }},
      {"actions", [](const auto& c) { return join(c.actions, ";"); }},
      {"directives", [](const auto& c) { return join(c.directives, ";"); }},
      {"instructions", [](const auto& c) { return std::to_string(c.accepted) + "|" + join(c.rejected, ";"); }},
      {"execution",
       [](const auto& c) {
         return snapshot_json(c.snapshot).dump() + "|" + std::to_string(c.end_step) + "|" +
                std::to_string(c.agents.blocked) + "|" + std::to_string(c.agents.cancelled) + "|" +
                std::to_string(c.agents.arrived) + "|" + std::to_string(c.agents.replanned);
       }},
      {"evaluation",
       [](const auto& c) {
         return exact(c.gap) + "|" + exact(c.delta) + "|" + exact(c.delta_e) + "|" + metric_map_json(c.planned).dump();
       }},
      {"trigger", [](const auto& c) { return std::string(c.triggered ? "1" : "0"); }},
  };
  return table;
}

}  // namespace

Divergence first_divergence(const std::vector<feedback::CycleReport>& a, const std::vector<feedback::CycleReport>& b) {
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [name, key] : stages())
      if (key(a[i]) != key(b[i])) return {static_cast<int>(i), name};
  if (a.size() != b.size()) return {static_cast<int>(n), "length"};
  return {};
}

std::string ablation_surface(std::string_view ablation) {
  if (ablation == "dual_indexing") return "prompt";
  if (ablation == "entropy_control") return "post_processing";
  if (ablation == "feedback_loop") return "trigger";
  throw Error(ErrorKind::ConfigError, "unknown ablation '" + std::string(ablation) + "'", "ablations");
}

DensityDump read_density_dump(std::istream& in) {
  auto fail = [](const std::string& m) { return Error(ErrorKind::DumpError, m); };
  auto numbers = [&](const std::string& line) {
    std::vector<double> v;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) {
      std::size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(f, &used);
      } catch (const std::logic_error&) {
        throw fail("non-numeric field '" + f + "'");
      }
      while (used < f.size() && std::isspace(static_cast<unsigned char>(f[used]))) ++used;
      if (used != f.size() || !std::isfinite(x)) throw fail("bad value '" + f + "'");
      v.push_back(x);
    }
    if (!line.empty() && line.back() == ',') throw fail("trailing comma");
    return v;
  };
  std::string line;
  if (!std::getline(in, line)) throw fail("empty dump");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "step,width,height") throw fail("missing header");
  if (!std::getline(in, line)) throw fail("missing dimensions");
  const auto dims = numbers(line);
  if (dims.size() != 3) throw fail("dimension line needs step,width,height");
  DensityDump d;
  d.step = static_cast<int>(dims[0]);
  d.width = static_cast<int>(dims[1]);
  d.height = static_cast<int>(dims[2]);
  if (d.width < 1 || d.height < 1 || dims[1] != d.width || dims[2] != d.height) throw fail("bad dimensions");
  for (int r = 0; r < d.height; ++r) {
    if (!std::getline(in, line)) throw fail("expected " + std::to_string(d.height) + " rows");
    const auto row = numbers(line);
    if (static_cast<int>(row.size()) != d.width) throw fail("row " + std::to_string(r) + " has the wrong width");
    d.values.insert(d.values.end(), row.begin(), row.end());
  }
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) throw fail("trailing data after the grid");
  return d;
}

namespace {

struct Rgb {
  int r, g, b;
};

Rgb parse_color(const std::string& hex) {
  if (hex.size() != 7 || hex[0] != '#') throw Error(ErrorKind::ConfigError, "colors are #rrggbb", "palette");
  const auto v = std::stoul(hex.substr(1), nullptr, 16);
  return {static_cast<int>((v >> 16) & 0xff), static_cast<int>((v >> 8) & 0xff), static_cast<int>(v & 0xff)};
}

std::string color_at(Rgb lo, Rgb hi, double t) {
  auto ch = [t](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", ch(lo.r, hi.r), ch(lo.g, hi.g), ch(lo.b, hi.b));
  return buf;
}

}  // namespace

void emit_heatmap(const DensityDump& dump, const Palette& palette, std::ostream& out) {
  if (dump.width < 1 || dump.height < 1 || dump.values.size() != static_cast<std::size_t>(dump.width) * dump.height)
    throw Error(ErrorKind::DumpError, "dump dimensions do not match its values");
  const Rgb lo = parse_color(palette.low), hi = parse_color(palette.high);
  const auto [mn, mx] = std::minmax_element(dump.values.begin(), dump.values.end());
  const double vmin = *mn, vmax = *mx;
  const int px = std::max(1, palette.cell_px);
  const int w = dump.width * px, h = dump.height * px;
  const int legend = 36;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h + legend << "\">\n";
  out << "<defs><linearGradient id=\"scale\"><stop offset=\"0\" stop-color=\"" << color_at(lo, hi, 0.0)
      << "\"/><stop offset=\"1\" stop-color=\"" << color_at(lo, hi, 1.0) << "\"/></linearGradient></defs>\n";
  out << "<rect class=\"background\" x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\""
      << color_at(lo, hi, 0.0) << "\"/>\n";
  for (int r = 0; r < dump.height; ++r)
    for (int c = 0; c < dump.width; ++c) {
      const double v = dump.values[static_cast<std::size_t>(r) * dump.width + c];
      const double t = vmax > vmin ? (v - vmin) / (vmax - vmin) : 0.0;
      out << "<rect class=\"cell\" x=\"" << c * px << "\" y=\"" << r * px << "\" width=\"" << px << "\" height=\""
          << px << "\" fill=\"" << color_at(lo, hi, t) << "\"/>\n";
    }
  const int bar = std::max(40, w / 2);
  out << "<rect class=\"legend\" x=\"4\" y=\"" << h + 6 << "\" width=\"" << bar << "\" height=\"10\" fill=\"url(#scale)\"/>\n";
  out << "<text class=\"legend-min\" x=\"4\" y=\"" << h + 30 << "\" font-size=\"10\">min " << fixed(vmin, 3)
      << "</text>\n";
  out << "<text class=\"legend-max\" x=\"" << bar + 4 << "\" y=\"" << h + 30
      << "\" font-size=\"10\" text-anchor=\"end\">max " << fixed(vmax, 3) << "</text>\n";
  out << "<text class=\"step\" x=\"" << w - 4 << "\" y=\"" << h + 16 << "\" font-size=\"10\" text-anchor=\"end\">step "
      << dump.step << "</text>\n";
  out << "</svg>\n";
}

void emit_heatmap(const fs::path& dump, const Palette& palette, const fs::path& out) {
  std::ifstream in(dump);
  if (!in) throw Error(ErrorKind::DumpError, "cannot open " + dump.string());
  const auto d = read_density_dump(in);
  write_file(out, [&](std::ostream& o) { emit_heatmap(d, palette, o); });
}

}  // namespace floodsim::harness

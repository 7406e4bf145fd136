// floodsim: run, compare and inspect flood-response simulations.
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "floodsim/harness.hpp"

namespace fs = std::filesystem;
using namespace floodsim;
using nlohmann::json;

namespace {

struct Overrides {
  std::string config;
  std::vector<std::string> scenarios;
  std::vector<std::string> strategies;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::vector<std::string> ablations;
  std::string out;
};

void add_common(CLI::App* cmd, Overrides& o, bool multi) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  if (multi) {
    cmd->add_option("--scenario", o.scenarios, "Extreme, Intermittent or Light (repeatable)");
    cmd->add_option("--strategy", o.strategies, "Empty, Ruled, Scripted or External (repeatable)");
  } else {
    cmd->add_option("--scenario", o.scenarios, "Extreme, Intermittent or Light")->expected(1);
    cmd->add_option("--strategy", o.strategies, "Empty, Ruled, Scripted or External")->expected(1);
  }
  cmd->add_option("--seed", o.seed, multi ? "base seed" : "master seed");
  cmd->add_option("--steps", o.steps, "simulation horizon");
  cmd->add_option("--ablate", o.ablations, "dual_indexing, entropy_control or feedback_loop (repeatable)");
  cmd->add_option("--out", o.out, "output directory");
}

harness::RunConfig base_config(const Overrides& o) {
  harness::RunConfig c = o.config.empty() ? harness::RunConfig{} : harness::load_config(o.config);
  if (!o.scenarios.empty()) c.scenario = world::parse_scenario_kind(o.scenarios.front());
  if (!o.strategies.empty()) c.strategy = harness::parse_strategy(o.strategies.front());
  if (o.seed) c.seed = *o.seed;
  if (o.steps) c.steps = *o.steps;
  for (const auto& a : o.ablations) harness::enable_ablation(c.cycle.ablations, a);
  if (!o.out.empty()) c.out_dir = o.out;
  harness::validate(c);
  return c;
}

json means_json(const harness::MetricMeans& m) {
  return {{"J", m.J}, {"f", m.f}, {"t", m.t}, {"c", m.c}, {"r", m.r}};
}

void write_tables(const fs::path& dir, const std::vector<harness::MatrixRow>& rows) {
  fs::create_directories(dir);
  std::ofstream m(dir / "matrix.csv");
  harness::write_matrix_csv(m, rows);
  std::vector<semeval::SemanticRow> semantic;
  for (const auto& r : rows) {
    auto row = r.semantic;
    row.setting = std::string(harness::to_string(r.strategy)) + " " + std::string(world::to_string(r.scenario)) + " " +
                  r.setting;
    semantic.push_back(row);
  }
  std::ofstream s(dir / "semantic.csv");
  semeval::write_semantic_report(s, semantic);
}

int cmd_run(const Overrides& o) {
  const auto config = base_config(o);
  const auto result = harness::run(config);
  std::cout << json{{"out", config.out_dir},
                    {"strategy", harness::to_string(config.strategy)},
                    {"scenario", world::to_string(config.scenario)},
                    {"setting", harness::ablation_label(config.cycle.ablations)},
                    {"cycles", result.cycles.size()},
                    {"trigger_events", result.trigger_events},
                    {"means", means_json(result.means)}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_matrix(const Overrides& o, int repeats, unsigned workers) {
  auto base = base_config(o);
  if (o.out.empty()) base.out_dir = "runs/matrix";
  harness::MatrixSpec spec;
  for (const auto& s : o.strategies) spec.strategies.push_back(harness::parse_strategy(s));
  if (spec.strategies.empty())
    spec.strategies = {harness::Strategy::Empty, harness::Strategy::Ruled, harness::Strategy::Scripted};
  for (const auto& s : o.scenarios) spec.scenarios.push_back(world::parse_scenario_kind(s));
  if (spec.scenarios.empty())
    spec.scenarios = {world::ScenarioKind::Extreme, world::ScenarioKind::Intermittent, world::ScenarioKind::Light};
  spec.settings = {base.cycle.ablations};
  spec.repeats = repeats;
  spec.base_seed = base.seed;
  spec.workers = workers;
  const auto rows = harness::run_matrix(base, spec);
  write_tables(base.out_dir, rows);
  harness::write_matrix_csv(std::cout, rows);
  return 0;
}

int cmd_ablate(const Overrides& o, int repeats, unsigned workers) {
  auto base = base_config(o);
  if (o.out.empty()) base.out_dir = "runs/ablate";
  harness::MatrixSpec spec;
  spec.strategies = {base.strategy};
  spec.scenarios = {base.scenario};
  spec.repeats = repeats;
  spec.base_seed = base.seed;
  spec.workers = workers;
  spec.settings.clear();
  spec.settings.push_back({});
  std::vector<std::string> names = o.ablations;
  if (names.empty()) names = {"dual_indexing", "entropy_control", "feedback_loop"};
  for (const auto& n : names) {
    feedback::Ablations a;
    harness::enable_ablation(a, n);
    spec.settings.push_back(a);
  }
  base.cycle.ablations = {};
  const auto rows = harness::run_matrix(base, spec);
  write_tables(base.out_dir, rows);

  // Where each single ablation first departs from the full run on the base seed.
  auto full_cfg = base;
  const auto full = harness::run(full_cfg, false);
  json diffs = json::object();
  for (const auto& n : names) {
    auto cfg = base;
    harness::enable_ablation(cfg.cycle.ablations, n);
    const auto d = harness::first_divergence(full.cycles, harness::run(cfg, false).cycles);
    diffs[n] = {{"first_cycle", d.cycle},
                {"first_stage", d.stage},
                {"expected_stage", harness::ablation_surface(n)},
                {"confined", d.cycle < 0 || d.stage == harness::ablation_surface(n)}};
  }
  std::ofstream(fs::path(base.out_dir) / "ablation_diff.json") << diffs.dump(2) << '\n';
  harness::write_matrix_csv(std::cout, rows);
  std::cout << diffs.dump() << '\n';
  return 0;
}

int cmd_heatmap(const std::vector<std::string>& dumps, const std::string& out, const harness::Palette& palette) {
  if (dumps.size() == 1 && !out.empty() && fs::path(out).extension() == ".svg") {
    harness::emit_heatmap(dumps.front(), palette, out);
    std::cout << out << '\n';
    return 0;
  }
  for (const auto& d : dumps) {
    fs::path target = fs::path(d).replace_extension(".svg");
    if (!out.empty()) {
      fs::create_directories(out);
      target = fs::path(out) / target.filename();
    }
    harness::emit_heatmap(d, palette, target);
    std::cout << target.string() << '\n';
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& label) {
  const knowledge::HashEmbedder embedder(64);
  std::vector<std::vector<metrics::MetricsSnapshot>> runs;
  std::vector<semeval::ResponseSet> consistency, diversity;
  for (const auto& d : dirs) {
    std::ifstream in(fs::path(d) / "summary.json");
    if (!in) throw Error(ErrorKind::IoError, "no summary.json in " + d);
    const auto j = json::parse(in);
    std::ifstream metrics_in(fs::path(d) / "metrics.csv");
    if (!metrics_in) throw Error(ErrorKind::IoError, "no metrics.csv in " + d);
    std::vector<metrics::MetricsSnapshot> series;
    std::string line;
    std::getline(metrics_in, line);
    while (std::getline(metrics_in, line)) {
      std::stringstream ss(line);
      std::vector<std::string> f;
      for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
      if (f.size() < 7) throw Error(ErrorKind::IoError, "short metrics row in " + d);
      series.push_back({std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stod(f[6]),
                        std::stoi(f[0])});
    }
    runs.push_back(std::move(series));
    for (const auto& c : j.at("cycles")) {
      const auto id = d + "#" + std::to_string(c.at("cycle").get<int>());
      const auto cons = c.at("consistency_responses").get<std::vector<std::string>>();
      const auto div = c.at("diversity_responses").get<std::vector<std::string>>();
      if (cons.size() >= 2) consistency.push_back(semeval::make_response_set(id, cons, embedder));
      if (div.size() >= 2) diversity.push_back(semeval::make_response_set(id, div, embedder, "regional"));
    }
  }
  const auto row = semeval::stability_report(label, runs, consistency, diversity);
  semeval::write_semantic_report(std::cout, {row});
  return 0;
}

int cmd_load(const std::string& graph, const std::string& segments) {
  json out = json::object();
  if (!graph.empty()) {
    std::ifstream in(graph);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + graph);
    const auto g = knowledge::read_graph(in);
    out["graph"] = {{"nodes", g.node_count()}, {"edges", g.edge_count()}, {"dim", g.dim()}};
  }
  if (!segments.empty()) {
    std::ifstream in(segments);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + segments);
    const knowledge::HashEmbedder embedder(64);
    out["segments"] = {{"count", knowledge::read_segments(in, embedder).size()}};
  }
  std::cout << out.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flood-response policy simulator"};
  app.require_subcommand(1);

  Overrides run_o, matrix_o, ablate_o;
  int matrix_repeats = 5, ablate_repeats = 5;
  unsigned workers = 0;
  auto* run = app.add_subcommand("run", "run one configuration");
  add_common(run, run_o, false);
  auto* matrix = app.add_subcommand("matrix", "strategies x scenarios x seeds");
  add_common(matrix, matrix_o, true);
  matrix->add_option("--repeats", matrix_repeats, "seeds per combination")->check(CLI::PositiveNumber);
  matrix->add_option("--workers", workers, "parallel runs (0: one per core)");
  auto* ablate = app.add_subcommand("ablate", "full loop against each single ablation");
  add_common(ablate, ablate_o, false);
  ablate->add_option("--repeats", ablate_repeats, "seeds per setting")->check(CLI::PositiveNumber);
  ablate->add_option("--workers", workers, "parallel runs (0: one per core)");

  std::vector<std::string> dumps;
  std::string heat_out;
  harness::Palette palette;
  auto* heatmap = app.add_subcommand("heatmap", "render density dumps as SVG");
  heatmap->add_option("dumps", dumps, "density dump files")->required();
  heatmap->add_option("--out", heat_out, "output file (.svg) or directory");
  heatmap->add_option("--low", palette.low, "color for the minimum");
  heatmap->add_option("--high", palette.high, "color for the maximum");
  heatmap->add_option("--cell-px", palette.cell_px, "pixels per cell");

  std::vector<std::string> report_dirs;
  std::string label = "run";
  auto* report = app.add_subcommand("report", "stability, SCS and SDS over run directories");
  report->add_option("dirs", report_dirs, "run output directories")->required();
  report->add_option("--label", label, "module setting name");

  std::string graph_file, segments_file;
  auto* load = app.add_subcommand("load", "ingest a graph snapshot and/or segment store");
  load->add_option("--graph", graph_file, "graph snapshot (JSON)");
  load->add_option("--segments", segments_file, "segment store (id<TAB>text)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_o);
    if (*matrix) return cmd_matrix(matrix_o, matrix_repeats, workers);
    if (*ablate) return cmd_ablate(ablate_o, ablate_repeats, workers);
    if (*heatmap) return cmd_heatmap(dumps, heat_out, palette);
    if (*report) return cmd_report(report_dirs, label);
    if (*load) return cmd_load(graph_file, segments_file);
  } catch (const Error& e) {
    json err = {{"error", to_string(e.kind())}, {"message", e.what()}};
    if (!e.field().empty()) err["field"] = e.field();
    std::cerr << err.dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "Internal"}, {"message", e.what()}}.dump() << '\n';
    return 3;
  }
  return 1;
}

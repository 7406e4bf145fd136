#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "floodsim/feedback.hpp"
#include "floodsim/semeval.hpp"
#include "floodsim/simulation.hpp"
#include "floodsim/world.hpp"

namespace floodsim::harness {

enum class Strategy { Empty, Ruled, Scripted, External };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view text);

// "dual_indexing", "entropy_control" or "feedback_loop"; throws ConfigError otherwise.
void enable_ablation(feedback::Ablations& a, std::string_view name);
std::vector<std::string> ablation_names(const feedback::Ablations& a);
std::string ablation_label(const feedback::Ablations& a);  // "full" or names joined by '+'

struct RunConfig {
  world::ScenarioKind scenario = world::ScenarioKind::Extreme;
  int steps = 100;
  std::uint64_t seed = 1;
  Strategy strategy = Strategy::Ruled;

  world::WorldOptions world;
  mobility::MobilityParams mobility;
  feedback::PopulationOptions population;
  metrics::WeightVector weights;
  policy::EntropyController entropy;
  feedback::CycleOptions cycle;  // ablations live here
  double relief_multiplier = 3.0;

  std::string script;           // Scripted: JSON script path, empty for the built-in fixture
  std::string endpoint;         // External: URL; FLOODSIM_BACKEND_URL fills it when empty
  int timeout_ms = 2000;

  std::vector<int> snapshot_steps{5, 30, 40, 45};
  std::string out_dir = "runs/out";
};

// Throws ConfigError naming the offending field.
void validate(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);
// Missing fields keep their defaults; unknown fields are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

std::unique_ptr<policy::PolicyBackend> make_backend(const RunConfig& config);

struct MetricMeans {
  double f = 0.0, t = 0.0, c = 0.0, r = 0.0, J = 0.0;
};

struct RunResult {
  RunConfig config;
  std::vector<feedback::StepRecord> steps;
  std::vector<feedback::CycleReport> cycles;
  std::vector<translate::InstructionLogRow> instructions;
  std::vector<mobility::TripRecord> trips;
  world::RainfallScenario scenario;
  MetricMeans means;  // over per-step snapshots
  double j_variance = 0.0;  // population variance of per-step J within the run
  int trigger_events = 0;

  std::vector<metrics::MetricsSnapshot> snapshots() const;
  std::vector<semeval::ResponseSet> consistency_sets(const knowledge::Embedder& embedder) const;
  std::vector<semeval::ResponseSet> diversity_sets(const knowledge::Embedder& embedder) const;
};

// Runs one configuration. With write_artifacts, every log lands in config.out_dir.
RunResult run(const RunConfig& config, bool write_artifacts = true);

void write_metrics_csv(std::ostream& out, const RunResult& result);
void write_cycle_csv(std::ostream& out, const RunResult& result);
nlohmann::json summary_json(const RunResult& result);

struct MatrixRow {
  Strategy strategy = Strategy::Empty;
  world::ScenarioKind scenario = world::ScenarioKind::Extreme;
  std::string setting;  // ablation label
  int runs = 0;
  MetricMeans mean;      // mean over runs of run means
  MetricMeans variance;  // population variance over runs of run means
  double within_run_j_variance = 0.0;  // mean of the per-run J variances
  semeval::SemanticRow semantic;
};

struct MatrixSpec {
  std::vector<Strategy> strategies;
  std::vector<world::ScenarioKind> scenarios;
  std::vector<feedback::Ablations> settings{feedback::Ablations{}};
  int repeats = 5;
  std::uint64_t base_seed = 1;
  unsigned workers = 0;  // 0: hardware concurrency
  bool write_artifacts = true;
};

// Every (strategy, scenario, setting) over seeds base..base+repeats-1, one run per
// worker. Rows come back in spec order regardless of completion order.
std::vector<MatrixRow> run_matrix(const RunConfig& base, const MatrixSpec& spec);
void write_matrix_csv(std::ostream& out, const std::vector<MatrixRow>& rows);

// Earliest point where two cycle logs differ, scanning cycles in order and,
// within a cycle, the pipeline stages in execution order: prompt,
// distribution, post_processing, actions, directives, instructions,
// execution, evaluation, trigger. cycle = -1 when the logs agree.
struct Divergence {
  int cycle = -1;
  std::string stage;
};

Divergence first_divergence(const std::vector<feedback::CycleReport>& a, const std::vector<feedback::CycleReport>& b);
// The stage an ablation is documented to change first.
std::string ablation_surface(std::string_view ablation);

struct Palette {
  std::string low = "#ffffff";
  std::string high = "#8b0000";
  int cell_px = 8;
};

struct DensityDump {
  int step = 0;
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major
};

// Throws DumpError for anything but the dump format.
DensityDump read_density_dump(std::istream& in);
// SVG with one rect per cell on a value-linear scale and a min/max legend.
void emit_heatmap(const DensityDump& dump, const Palette& palette, std::ostream& out);
void emit_heatmap(const std::filesystem::path& dump, const Palette& palette, const std::filesystem::path& out);

}  // namespace floodsim::harness

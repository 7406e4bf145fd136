#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "floodsim/knowledge.hpp"
#include "floodsim/metrics.hpp"
#include "floodsim/policy.hpp"
#include "floodsim/simulation.hpp"
#include "floodsim/translate.hpp"

namespace floodsim::feedback {

struct Ablations {
  bool dual_indexing = false;   // prompts carry the state only
  bool entropy_control = false; // no projection, no lambda update
  bool feedback_loop = false;   // the trigger never fires

  friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct TriggerDecision {
  double gap = 0.0;
  double delta = 0.0;
  bool triggered = false;
};

// Gap against the full J history and the adaptive threshold over the window.
TriggerDecision should_replan(const metrics::FeedbackWindow& window, double j, metrics::ThresholdStat stat,
                              double lambda_thr, double floor = 0.015);

struct CycleOptions {
  int cycle_len = 10;
  int hops = 1;
  std::size_t top_k = 5;
  double seed_threshold = 0.7;
  double flood_spot_threshold = 0.9;
  double failure_tolerance = 0.01;  // a metric fails when worse than planned by more than this
  metrics::ThresholdStat threshold_stat = metrics::ThresholdStat::Gap;
  double lambda_thr = 1.0;
  double delta_floor = 0.015;
  std::size_t window = 10;
  int global_draws = 64;
  int regional_draws = 2;
  int consistency_samples = 3;
  std::string task = "choose region-level flood response actions that minimise the weighted objective";
  Ablations ablations;
};

struct CycleReport {
  int cycle = 0;
  int start_step = 0;
  int end_step = 0;  // exclusive
  metrics::MetricsSnapshot snapshot;
  double gap = 0.0;
  double delta = 0.0;
  bool triggered = false;
  double delta_e = 0.0;
  metrics::MetricMap planned;
  metrics::MetricMap executed;
  std::vector<double> flood_by_region;

  std::string backend;
  bool fallback = false;
  std::string fallback_reason;

  std::string prompt;
  bool prompt_has_feedback = false;
  double raw_entropy = 0.0;
  double projected_entropy = 0.0;
  double conditional_entropy = 0.0;
  double lambda_before = 0.0;
  double lambda_after = 0.0;
  double loss = 0.0;
  std::vector<std::string> actions;     // non-NoOp global actions
  std::vector<std::string> directives;  // sampled regional directives, region order
  int accepted = 0;
  std::vector<std::string> rejected;    // "region r tag: reason"
  CycleAggregate agents;

  // Response sets for the semantic scores of this cycle's prompt.
  std::vector<std::string> consistency_responses;
  std::vector<std::string> diversity_responses;
};

struct ReplanResult {
  knowledge::FailureFeedback feedback;
  knowledge::KnowledgeGraph graph;
};

// Failure annotations for the next prompt, and FloodSpot nodes with risks
// edges for regions above the threshold. Throws NotTriggered.
ReplanResult trigger_replanning(const CycleReport& report, const knowledge::KnowledgeGraph& graph,
                                const knowledge::Embedder& embedder, double flood_spot_threshold = 0.9,
                                double failure_tolerance = 0.01);

// Owns one run's control loop: knowledge, policy state and the instruction board.
class Orchestrator {
public:
  Orchestrator(Simulation& sim, std::unique_ptr<policy::PolicyBackend> backend, policy::EntropyController controller,
               CycleOptions options, std::uint64_t seed, double relief_multiplier = 3.0,
               std::shared_ptr<const knowledge::Embedder> embedder = nullptr);

  CycleReport decision_cycle();
  std::vector<CycleReport> run();

  // Replaces the measured J of each cycle, for exercising the trigger.
  void set_objective_probe(std::function<double(int cycle, double measured)> probe) { probe_ = std::move(probe); }

  const knowledge::KnowledgeGraph& graph() const { return graph_; }
  const knowledge::SegmentStore& segments() const { return segments_; }
  const translate::InstructionBoard& board() const { return board_; }
  const std::vector<translate::InstructionLogRow>& instruction_log() const { return instruction_log_; }
  const std::optional<knowledge::FailureFeedback>& pending_feedback() const { return pending_; }
  const policy::EntropyController& controller() const { return controller_; }
  const metrics::FeedbackWindow& window() const { return window_; }
  int cycle() const { return cycle_; }

private:
  Simulation& sim_;
  std::unique_ptr<policy::PolicyBackend> backend_;
  policy::RuledBackend fallback_;
  policy::EntropyController controller_;
  CycleOptions options_;
  std::uint64_t seed_;
  std::shared_ptr<const knowledge::Embedder> embedder_;
  policy::ActionVocabulary vocabulary_;
  knowledge::KnowledgeGraph graph_;
  knowledge::SegmentStore segments_;
  translate::InstructionBoard board_;
  metrics::FeedbackWindow window_;
  std::optional<knowledge::FailureFeedback> pending_;
  std::optional<metrics::MetricsSnapshot> previous_;
  std::vector<translate::InstructionLogRow> instruction_log_;
  std::function<double(int, double)> probe_;
  int cycle_ = 0;
};

}  // namespace floodsim::feedback

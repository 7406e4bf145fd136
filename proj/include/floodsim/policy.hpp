#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "floodsim/common.hpp"
#include "floodsim/knowledge.hpp"
#include "floodsim/metrics.hpp"
#include "floodsim/rng.hpp"
#include "floodsim/world.hpp"

namespace floodsim::policy {

enum class Verb { RerouteRegion, CloseRoad, HoldTransit, DispatchRelief, NoOp };
inline constexpr int kVerbCount = 5;

std::string_view to_string(Verb verb);
Verb parse_verb(std::string_view text);

struct HighLevelAction {
  Verb verb = Verb::NoOp;
  int region = 0;

  friend auto operator<=>(const HighLevelAction&, const HighLevelAction&) = default;
};

std::string to_string(const HighLevelAction& a);

// A_h = verbs x regions, indexed verb-major.
class ActionVocabulary {
public:
  explicit ActionVocabulary(int n_regions) : n_regions_(n_regions) {}
  int n_regions() const { return n_regions_; }
  std::size_t size() const { return static_cast<std::size_t>(kVerbCount * n_regions_); }
  std::size_t index(const HighLevelAction& a) const;
  HighLevelAction action(std::size_t index) const;

private:
  int n_regions_;
};

struct PolicyDistribution {
  std::vector<HighLevelAction> support;
  std::vector<double> probs;

  // Throws InvalidDistribution unless non-empty, duplicate-free, probs >= 0 and summing to 1 (1e-9).
  void validate() const;
  // Position in `support` of the most likely action; ties go to the lowest action.
  std::size_t argmax() const;
  static PolicyDistribution deterministic(HighLevelAction a) { return {{a}, {1.0}}; }
};

// Shannon entropy in nats with 0 ln 0 = 0. Throws InvalidDistribution.
double entropy(std::span<const double> probs);
double entropy(const PolicyDistribution& dist);

// Expected local entropy under the global distribution.
double conditional_entropy(const std::map<HighLevelAction, std::vector<double>>& locals,
                           const PolicyDistribution& global);

// Mixes toward the one-hot of `argmax_index` until the entropy falls in
// [tau - 1e-4, tau]; returned unchanged when already within tau. A
// non-positive tau yields the one-hot itself.
std::vector<double> project_entropy(std::span<const double> probs, double tau, std::size_t argmax_index);
PolicyDistribution project_entropy(const PolicyDistribution& dist, double tau);

double entropy_loss(double avg_log_prob, double entropy, double tau, double lambda);
double update_lambda(double lambda, double alpha, double entropy, double tau);

struct EntropyController {
  double tau = 1.2;
  double lambda = 1.0;
  double alpha = 0.05;

  void validate() const;
};

struct PolicyRequest {
  const knowledge::HybridPrompt& prompt;
  const knowledge::StateSummary& state;
  const ActionVocabulary& vocabulary;
  double tau = 1.2;
  int cycle = 0;
};

struct BackendResponse {
  PolicyDistribution distribution;
  // Expected (f, t, c, r) after executing the plan.
  std::optional<metrics::MetricMap> forecast;
};

class PolicyBackend {
public:
  virtual ~PolicyBackend() = default;
  virtual std::string name() const = 0;
  // Throws BackendUnavailable when no usable response can be produced.
  virtual BackendResponse generate(const PolicyRequest& request) = 0;
};

metrics::MetricMap persistence_forecast(const knowledge::StateSummary& state);

class EmptyBackend final : public PolicyBackend {
public:
  std::string name() const override { return "Empty"; }
  BackendResponse generate(const PolicyRequest& request) override;
};

struct RuledOptions {
  double flood_threshold = 0.7;
  double congestion_threshold = 0.7;
  double heavy_blocking = 0.25;  // share of blocked roads that calls for rerouting and closures
};

// Threshold rules on the current regional indices. Flagged regions with a
// heavy share of blocked roads get mostly reroute/closure mass, lightly blocked
// ones get relief and dry ones nothing. Failure feedback adds relief at remembered flood spots and,
// when trips are failing, in every blocked region above the city average.
class RuledBackend final : public PolicyBackend {
public:
  explicit RuledBackend(RuledOptions options = {}) : options_(options) {}
  std::string name() const override { return "Ruled"; }
  BackendResponse generate(const PolicyRequest& request) override;

private:
  RuledOptions options_;
};

struct ScriptStep {
  PolicyDistribution distribution;
  std::optional<metrics::MetricMap> forecast;
  bool fail = false;  // simulate an unavailable backend on this call
};

// Replays recorded responses, cycling when the script is exhausted.
class ScriptedBackend final : public PolicyBackend {
public:
  explicit ScriptedBackend(std::vector<ScriptStep> script);
  std::string name() const override { return "Scripted"; }
  BackendResponse generate(const PolicyRequest& request) override;
  std::size_t calls() const { return calls_; }

private:
  std::vector<ScriptStep> script_;
  std::size_t calls_ = 0;
};

// Script file: JSON array of {"actions": [{"verb","region"}...], "probs": [...],
// optional "forecast": {"f","t","c","r"}, optional "fail": bool}.
std::vector<ScriptStep> read_script(const std::string& path);
// Uniform over relief and reroute for every region: a high-entropy fixture.
std::vector<ScriptStep> default_script(int n_regions);

struct ExternalOptions {
  std::string endpoint;  // http://host:port/path
  std::chrono::milliseconds timeout{2000};
};

// HTTP/JSON backend. Request: {"prompt", "vocabulary": [{"verb","region"}], "tau"}.
// Response: {"probs": [...]} over the vocabulary, or {"ranked": [index...]} turned
// into softmax(-rank); optional "forecast".
class ExternalBackend final : public PolicyBackend {
public:
  explicit ExternalBackend(ExternalOptions options);
  std::string name() const override { return "External"; }
  BackendResponse generate(const PolicyRequest& request) override;

private:
  ExternalOptions options_;
};

std::string encode_request(const PolicyRequest& request);
BackendResponse decode_response(std::string_view body, const ActionVocabulary& vocabulary);

struct GlobalPolicy {
  PolicyDistribution raw;
  PolicyDistribution projected;
  double raw_entropy = 0.0;
  double projected_entropy = 0.0;
  double lambda_before = 0.0;
  double lambda_after = 0.0;
  double loss = 0.0;
  std::vector<HighLevelAction> actions;  // one per region, NoOp where nothing was drawn
  std::optional<metrics::MetricMap> forecast;
};

// First draw per region wins; NoOp draws fill nothing.
std::vector<HighLevelAction> sample_actions(const PolicyDistribution& dist, int n_regions, int draws, Rng& rng);

// Projection to controller.tau and lambda update from the pre-projection
// entropy, both skipped when entropy_control is false.
GlobalPolicy generate_global(const PolicyRequest& request, PolicyBackend& backend, EntropyController& controller,
                             Rng& rng, bool entropy_control, int draws);

struct RegionObservation {
  int region = 0;
  double mean_depth = 0.0;
  double max_depth = 0.0;
  int road_cells = 0;
  std::vector<std::pair<GridCoord, double>> flooded_roads;  // deepest first, then row-major
  std::optional<GridCoord> deepest_road;
};

RegionObservation observe_region(const world::WorldState& world, int region, double block_depth);

struct RegionalPlan {
  int region = 0;
  HighLevelAction provenance;
  std::vector<std::string> candidates;
  std::vector<double> raw_probs;
  std::vector<double> probs;
  std::vector<std::string> directives;  // sampled, in draw order, unique
};

// Candidate directives and local distribution for a global action, projected
// to entropy <= bound (bound <= 0 gives a deterministic local policy).
RegionalPlan refine(const HighLevelAction& action, const RegionObservation& obs, double bound);

// Throws UnknownRegion when the action's region is outside [0, n_regions).
RegionalPlan generate_regional(const HighLevelAction& action, const RegionObservation& obs, int n_regions,
                               double bound, int draws, Rng& rng);

}  // namespace floodsim::policy

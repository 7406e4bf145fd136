#include "floodsim/feedback.hpp"

#include <limits>
#include <map>

namespace floodsim::feedback {

namespace {

std::string actions_text(const std::vector<policy::HighLevelAction>& actions) {
  std::string out;
  for (const auto& a : actions) {
    if (a.verb == policy::Verb::NoOp) continue;
    if (!out.empty()) out += "; ";
    out += std::string(policy::to_string(a.verb)) + " region " + std::to_string(a.region);
  }
  return out.empty() ? "no action" : out;
}

}  // namespace

TriggerDecision should_replan(const metrics::FeedbackWindow& window, double j, metrics::ThresholdStat stat,
                              double lambda_thr, double floor) {
  TriggerDecision d;
  d.gap = metrics::objective_gap(window.history(), j);
  const auto values = window.window_values(stat);
  d.delta = metrics::adaptive_threshold(values, lambda_thr, floor);
  d.triggered = !window.empty() && d.gap >= d.delta;
  return d;
}

ReplanResult trigger_replanning(const CycleReport& report, const knowledge::KnowledgeGraph& graph,
                                const knowledge::Embedder& embedder, double flood_spot_threshold,
                                double failure_tolerance) {
  if (!report.triggered) throw Error(ErrorKind::NotTriggered, "cycle " + std::to_string(report.cycle) + " did not trigger");
  ReplanResult out{{}, graph};
  auto& fb = out.feedback;
  fb.delta_e = report.delta_e;
  for (const auto& [key, executed] : report.executed) {
    const auto it = report.planned.find(key);
    if (it == report.planned.end()) continue;
    const double delta = executed - it->second;
    fb.metric_deltas[key] = delta;
    // r is a benefit, the others are costs.
    const double worse = key == "r" ? -delta : delta;
    if (worse > failure_tolerance) fb.failed_metrics.push_back(key);
  }
  fb.rejected = report.rejected;

  std::vector<knowledge::Node> nodes;
  std::vector<knowledge::Edge> edges;
  for (std::size_t r = 0; r < report.flood_by_region.size(); ++r) {
    if (report.flood_by_region[r] <= flood_spot_threshold) continue;
    const int region = static_cast<int>(r);
    knowledge::Node n;
    n.id = knowledge::flood_spot_node_id(region);
    n.type = knowledge::NodeType::FloodSpot;
    n.attributes["region"] = std::to_string(region);
    n.feature = embedder.embed("flood spot region " + std::to_string(region));
    nodes.push_back(std::move(n));
    edges.push_back({knowledge::flood_spot_node_id(region), knowledge::region_node_id(region), knowledge::EdgeType::Risks});
  }
  out.graph = knowledge::update_graph(graph, nodes, edges);
  return out;
}

Orchestrator::Orchestrator(Simulation& sim, std::unique_ptr<policy::PolicyBackend> backend,
                           policy::EntropyController controller, CycleOptions options, std::uint64_t seed,
                           double relief_multiplier, std::shared_ptr<const knowledge::Embedder> embedder)
    : sim_(sim),
      backend_(std::move(backend)),
      controller_(controller),
      options_(std::move(options)),
      seed_(seed),
      embedder_(embedder ? std::move(embedder) : std::make_shared<knowledge::HashEmbedder>(64)),
      vocabulary_(sim.world().n_regions()),
      graph_(build_city_graph(sim.world(), *embedder_)),
      segments_(synthesize_segments(sim.world(), *embedder_, substream_seed(seed, "segments"))),
      board_(sim.world().n_regions(), relief_multiplier),
      window_(options_.window) {
  if (!backend_) throw Error(ErrorKind::ConfigError, "no policy backend", "strategy");
  if (options_.cycle_len < 1) throw Error(ErrorKind::ConfigError, "cycle length must be >= 1", "feedback.cycle_len");
  controller_.validate();
}

CycleReport Orchestrator::decision_cycle() {
  CycleReport rep;
  rep.cycle = cycle_;
  rep.start_step = sim_.step_index();
  const int step = rep.start_step;
  const int n = sim_.world().n_regions();
  const auto& abl = options_.ablations;
  const bool projection = !abl.entropy_control;

  // Retrieval over both channels.
  const auto state = sim_.summarize(board_.active_regions(step));
  knowledge::KnowledgeGraph subgraph(graph_.dim());
  std::vector<knowledge::ScoredSegment> retrieved;
  if (!abl.dual_indexing) {
    std::vector<std::string> seeds;
    for (int r : state.seed_regions(options_.seed_threshold)) seeds.push_back(knowledge::region_node_id(r));
    if (!seeds.empty()) subgraph = knowledge::extract_subgraph(graph_, seeds, options_.hops);
    retrieved = knowledge::retrieve_topk(knowledge::embed_state(state, *embedder_), segments_, options_.top_k);
  }
  const auto feedback = pending_;
  pending_.reset();
  const auto prompt = knowledge::build_prompt(state.serialize(options_.seed_threshold), subgraph, retrieved,
                                              options_.task, feedback);
  rep.prompt = prompt.serialize();
  rep.prompt_has_feedback = feedback.has_value();

  // Global strategy, with the rule table standing in when the backend fails.
  const policy::PolicyRequest request{prompt, state, vocabulary_, controller_.tau, cycle_};
  const auto policy_seed = substream_seed(seed_, "policy", static_cast<std::uint64_t>(cycle_));
  policy::GlobalPolicy global;
  try {
    Rng rng(policy_seed);
    global = policy::generate_global(request, *backend_, controller_, rng, projection, options_.global_draws);
    rep.backend = backend_->name();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::BackendUnavailable) throw;
    rep.fallback = true;
    rep.fallback_reason = e.what();
    Rng rng(policy_seed);
    global = policy::generate_global(request, fallback_, controller_, rng, projection, options_.global_draws);
    rep.backend = fallback_.name();
  }
  rep.raw_entropy = global.raw_entropy;
  rep.projected_entropy = global.projected_entropy;
  rep.lambda_before = global.lambda_before;
  rep.lambda_after = global.lambda_after;
  rep.loss = global.loss;
  for (const auto& a : global.actions)
    if (a.verb != policy::Verb::NoOp) rep.actions.push_back(policy::to_string(a));

  // Regional refinement.
  const double block = sim_.mobility().resident_block_depth;
  const double bound = projection ? std::min(global.projected_entropy, controller_.tau)
                                  : std::numeric_limits<double>::infinity();
  std::map<int, policy::RegionObservation> observations;
  auto observation = [&](int region) -> const policy::RegionObservation& {
    auto it = observations.find(region);
    if (it == observations.end()) it = observations.emplace(region, policy::observe_region(sim_.world(), region, block)).first;
    return it->second;
  };
  std::vector<policy::RegionalPlan> plans;
  for (const auto& a : global.actions) {
    if (a.verb == policy::Verb::NoOp) continue;
    Rng rng(substream_seed(seed_, "regional", static_cast<std::uint64_t>(cycle_) * static_cast<std::uint64_t>(n) +
                                                  static_cast<std::uint64_t>(a.region)));
    plans.push_back(policy::generate_regional(a, observation(a.region), n, bound, options_.regional_draws, rng));
  }
  std::map<policy::HighLevelAction, std::vector<double>> locals;
  for (const auto& a : global.projected.support) {
    if (a.verb == policy::Verb::NoOp || a.region < 0 || a.region >= n)
      locals[a] = {};
    else
      locals[a] = policy::refine(a, observation(a.region), bound).probs;
  }
  rep.conditional_entropy = policy::conditional_entropy(locals, global.projected);

  // Translation, the feasibility wrapper and dispatch.
  const translate::WrapOptions wrap{sim_.horizon(), block};
  for (const auto& plan : plans) {
    for (const auto& d : plan.directives) rep.directives.push_back(d);
    std::vector<translate::Instruction> instructions;
    try {
      instructions = translate::translate(plan, step, options_.cycle_len);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UnknownDirective) throw;
      rep.rejected.push_back("region " + std::to_string(plan.region) + ": " + e.what());
      continue;
    }
    for (const auto& instr : instructions) {
      const auto wrapped = translate::wrap_accuracy(instr, sim_.world(), wrap);
      if (wrapped.accepted()) {
        board_.dispatch(*wrapped.instruction, sim_.world());
        ++rep.accepted;
        instruction_log_.push_back({cycle_, *wrapped.instruction, true, ""});
      } else {
        rep.rejected.push_back("region " + std::to_string(instr.region) + " " +
                               std::string(translate::to_string(instr.tag)) + ": " + wrapped.reason);
        instruction_log_.push_back({cycle_, instr, false, wrapped.reason});
      }
    }
  }

  // Response sets for the semantic scores.
  for (int k = 0; k < options_.consistency_samples; ++k) {
    Rng rng(substream_seed(seed_, "consistency",
                           static_cast<std::uint64_t>(cycle_) * 1000u + static_cast<std::uint64_t>(k)));
    rep.consistency_responses.push_back(actions_text(policy::sample_actions(global.projected, n, options_.global_draws, rng)));
  }
  for (const auto& plan : plans) {
    std::string text = "region " + std::to_string(plan.region);
    for (const auto& d : plan.directives) text += "; " + d;
    rep.diversity_responses.push_back(std::move(text));
  }

  // Execution.
  sim_.refresh_routes(board_);
  for (int s = 0; s < options_.cycle_len && !sim_.finished(); ++s)
    sim_.step(board_, board_.drainage_multipliers(sim_.step_index()), &rep.agents);
  rep.end_step = sim_.step_index();

  // Evaluation.
  rep.snapshot = sim_.steps().empty() ? sim_.snapshot() : sim_.steps().back().snapshot;
  if (probe_) rep.snapshot.J = probe_(cycle_, rep.snapshot.J);
  rep.flood_by_region = metrics::flood_index(sim_.world()).per_region;
  const auto decision = should_replan(window_, rep.snapshot.J, options_.threshold_stat, options_.lambda_thr,
                                      options_.delta_floor);
  rep.gap = decision.gap;
  rep.delta = decision.delta;
  rep.triggered = decision.triggered && !abl.feedback_loop;
  window_.push(rep.snapshot, rep.gap);

  rep.planned = global.forecast ? *global.forecast
                                : (previous_ ? metrics::to_metric_map(*previous_) : policy::persistence_forecast(state));
  rep.executed = metrics::to_metric_map(rep.snapshot);
  rep.delta_e = metrics::execution_deviation(rep.planned, rep.executed);
  previous_ = rep.snapshot;

  if (rep.triggered) {
    auto replan = trigger_replanning(rep, graph_, *embedder_, options_.flood_spot_threshold, options_.failure_tolerance);
    graph_ = std::move(replan.graph);
    pending_ = std::move(replan.feedback);
  }
  ++cycle_;
  return rep;
}

std::vector<CycleReport> Orchestrator::run() {
  std::vector<CycleReport> out;
  while (!sim_.finished()) out.push_back(decision_cycle());
  return out;
}

}  // namespace floodsim::feedback

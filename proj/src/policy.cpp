#include "floodsim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

namespace floodsim::policy {

namespace {

std::vector<double> mix_toward(std::span<const double> p, std::size_t k, double beta) {
  std::vector<double> out(p.begin(), p.end());
  for (auto& v : out) v *= (1.0 - beta);
  out[k] += beta;
  return out;
}

double entropy_unchecked(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

std::size_t draw(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Rounding left u above the final cumulative sum: take the last positive entry.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return i;
  return 0;
}

std::size_t argmax_of(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

std::string cell_text(GridCoord c) { return "(" + std::to_string(c.row) + ", " + std::to_string(c.col) + ")"; }

}  // namespace

std::string_view to_string(Verb verb) {
  switch (verb) {
    case Verb::RerouteRegion: return "RerouteRegion";
    case Verb::CloseRoad: return "CloseRoad";
    case Verb::HoldTransit: return "HoldTransit";
    case Verb::DispatchRelief: return "DispatchRelief";
    case Verb::NoOp: return "NoOp";
  }
  return "NoOp";
}

Verb parse_verb(std::string_view text) {
  for (int v = 0; v < kVerbCount; ++v)
    if (to_string(static_cast<Verb>(v)) == text) return static_cast<Verb>(v);
  throw Error(ErrorKind::InvalidDistribution, "unknown verb '" + std::string(text) + "'");
}

std::string to_string(const HighLevelAction& a) {
  return std::string(to_string(a.verb)) + ":" + std::to_string(a.region);
}

std::size_t ActionVocabulary::index(const HighLevelAction& a) const {
  return static_cast<std::size_t>(static_cast<int>(a.verb) * n_regions_ + a.region);
}

HighLevelAction ActionVocabulary::action(std::size_t index) const {
  const int i = static_cast<int>(index);
  return {static_cast<Verb>(i / n_regions_), i % n_regions_};
}

void PolicyDistribution::validate() const {
  if (support.empty() || support.size() != probs.size())
    throw Error(ErrorKind::InvalidDistribution, "support and probabilities must be non-empty and aligned");
  std::set<HighLevelAction> seen(support.begin(), support.end());
  if (seen.size() != support.size()) throw Error(ErrorKind::InvalidDistribution, "duplicate action in support");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorKind::InvalidDistribution, "negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorKind::InvalidDistribution, "probabilities must sum to 1");
}

std::size_t PolicyDistribution::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best] || (probs[i] == probs[best] && support[i] < support[best])) best = i;
  return best;
}

double entropy(std::span<const double> probs) {
  if (probs.empty()) throw Error(ErrorKind::InvalidDistribution, "empty distribution");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorKind::InvalidDistribution, "negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorKind::InvalidDistribution, "probabilities must sum to 1");
  return entropy_unchecked(probs);
}

double entropy(const PolicyDistribution& dist) {
  dist.validate();
  return entropy_unchecked(dist.probs);
}

double conditional_entropy(const std::map<HighLevelAction, std::vector<double>>& locals,
                           const PolicyDistribution& global) {
  global.validate();
  double h = 0.0;
  for (std::size_t i = 0; i < global.support.size(); ++i) {
    if (global.probs[i] == 0.0) continue;
    const auto it = locals.find(global.support[i]);
    if (it == locals.end())
      throw Error(ErrorKind::MissingLocalPolicy, "no local policy for " + to_string(global.support[i]));
    if (!it->second.empty()) h += global.probs[i] * entropy(it->second);
  }
  return h;
}

std::vector<double> project_entropy(std::span<const double> probs, double tau, std::size_t argmax_index) {
  const double h0 = entropy(probs);
  if (h0 <= tau) return {probs.begin(), probs.end()};
  if (tau <= 0.0) return mix_toward(probs, argmax_index, 1.0);
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double h = entropy_unchecked(mix_toward(probs, argmax_index, mid));
    if (h > tau) {
      lo = mid;
    } else {
      hi = mid;
      if (h >= tau - 1e-4) break;
    }
  }
  return mix_toward(probs, argmax_index, hi);
}

PolicyDistribution project_entropy(const PolicyDistribution& dist, double tau) {
  dist.validate();
  return {dist.support, project_entropy(dist.probs, tau, dist.argmax())};
}

double entropy_loss(double avg_log_prob, double entropy, double tau, double lambda) {
  return avg_log_prob - lambda * std::abs(entropy - tau);
}

double update_lambda(double lambda, double alpha, double entropy, double tau) {
  return std::max(0.0, lambda + alpha * (entropy - tau));
}

void EntropyController::validate() const {
  if (!(tau > 0.0)) throw Error(ErrorKind::ConfigError, "tau must be > 0", "policy.tau");
  if (!(lambda >= 0.0)) throw Error(ErrorKind::ConfigError, "lambda must be >= 0", "policy.lambda_init");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::ConfigError, "alpha must be in (0, 1)", "policy.alpha");
}

metrics::MetricMap persistence_forecast(const knowledge::StateSummary& state) {
  return {{"c", state.c}, {"f", state.f}, {"r", state.r}, {"t", state.t}};
}

BackendResponse EmptyBackend::generate(const PolicyRequest& request) {
  return {PolicyDistribution::deterministic({Verb::NoOp, 0}), persistence_forecast(request.state)};
}

BackendResponse RuledBackend::generate(const PolicyRequest& request) {
  const auto& s = request.state;
  std::map<HighLevelAction, double> weight;
  const int n = request.vocabulary.n_regions();
  for (int r = 0; r < n; ++r) {
    const auto i = static_cast<std::size_t>(r);
    const double fa = i < s.flood_by_region.size() ? s.flood_by_region[i] : 0.5;
    const double ta = i < s.congestion_by_region.size() ? s.congestion_by_region[i] : 0.5;
    const double blocked = i < s.blocked_by_region.size() ? s.blocked_by_region[i] : 0.0;
    if (fa > options_.flood_threshold && blocked >= options_.heavy_blocking) {
      weight[{Verb::RerouteRegion, r}] += 0.40 * fa;
      weight[{Verb::CloseRoad, r}] += 0.35 * fa;
      weight[{Verb::DispatchRelief, r}] += 0.25 * fa;
    } else if (fa > options_.flood_threshold && blocked > 0.0) {
      weight[{Verb::DispatchRelief, r}] += 0.6 * fa;
    }
    if (ta > options_.congestion_threshold && blocked > 0.0) weight[{Verb::HoldTransit, r}] += 0.15 * ta;
  }
  if (request.prompt.feedback) {
    const auto& failed = request.prompt.feedback->failed_metrics;
    const bool trips_failing = std::find(failed.begin(), failed.end(), "c") != failed.end() ||
                               std::find(failed.begin(), failed.end(), "r") != failed.end();
    for (int r : request.prompt.flood_spot_regions()) {
      if (r < 0 || r >= n) continue;
      weight[{Verb::DispatchRelief, r}] += 0.5;
    }
    // Failing trips widen relief to every region flooding above the city average.
    if (trips_failing) {
      for (int r = 0; r < n && static_cast<std::size_t>(r) < s.flood_by_region.size(); ++r) {
        const double fa = s.flood_by_region[static_cast<std::size_t>(r)];
        const bool blocked = static_cast<std::size_t>(r) < s.blocked_by_region.size() &&
                             s.blocked_by_region[static_cast<std::size_t>(r)] > 0.0;
        if (fa > 0.5 && blocked) weight[{Verb::DispatchRelief, r}] += 0.3 * fa;
      }
    }
  }
  PolicyDistribution dist;
  double total = 0.0;
  for (const auto& [a, w] : weight) total += w;
  if (total <= 0.0) return {PolicyDistribution::deterministic({Verb::NoOp, 0}), persistence_forecast(s)};
  for (const auto& [a, w] : weight) {
    dist.support.push_back(a);
    dist.probs.push_back(w / total);
  }
  return {std::move(dist), persistence_forecast(s)};
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptStep> script) : script_(std::move(script)) {
  if (script_.empty()) throw Error(ErrorKind::ConfigError, "scripted backend needs at least one step", "policy.script");
  for (const auto& step : script_)
    if (!step.fail) step.distribution.validate();
}

BackendResponse ScriptedBackend::generate(const PolicyRequest& request) {
  const auto& step = script_[calls_++ % script_.size()];
  if (step.fail) throw Error(ErrorKind::BackendUnavailable, "scripted failure");
  return {step.distribution, step.forecast ? step.forecast : std::optional(persistence_forecast(request.state))};
}

namespace {

std::optional<metrics::MetricMap> parse_forecast(const nlohmann::json& j) {
  if (!j.contains("forecast")) return std::nullopt;
  const auto& f = j.at("forecast");
  return metrics::MetricMap{{"c", f.at("c").get<double>()},
                            {"f", f.at("f").get<double>()},
                            {"r", f.at("r").get<double>()},
                            {"t", f.at("t").get<double>()}};
}

}  // namespace

std::vector<ScriptStep> read_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open script " + path, "policy.script");
  try {
    const auto j = nlohmann::json::parse(in);
    std::vector<ScriptStep> steps;
    for (const auto& item : j) {
      ScriptStep s;
      s.fail = item.value("fail", false);
      if (!s.fail) {
        for (const auto& a : item.at("actions"))
          s.distribution.support.push_back({parse_verb(a.at("verb").get<std::string>()), a.at("region").get<int>()});
        s.distribution.probs = item.at("probs").get<std::vector<double>>();
      }
      s.forecast = parse_forecast(item);
      steps.push_back(std::move(s));
    }
    return steps;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigError, e.what(), "policy.script");
  }
}

std::vector<ScriptStep> default_script(int n_regions) {
  ScriptStep s;
  for (int r = 0; r < n_regions; ++r) s.distribution.support.push_back({Verb::RerouteRegion, r});
  for (int r = 0; r < n_regions; ++r) s.distribution.support.push_back({Verb::DispatchRelief, r});
  s.distribution.probs.assign(s.distribution.support.size(), 1.0 / static_cast<double>(s.distribution.support.size()));
  return {s};
}

std::string encode_request(const PolicyRequest& request) {
  nlohmann::json j;
  j["prompt"] = request.prompt.serialize();
  j["tau"] = request.tau;
  j["cycle"] = request.cycle;
  auto& vocab = j["vocabulary"] = nlohmann::json::array();
  for (std::size_t i = 0; i < request.vocabulary.size(); ++i) {
    const auto a = request.vocabulary.action(i);
    vocab.push_back({{"verb", to_string(a.verb)}, {"region", a.region}});
  }
  return j.dump();
}

BackendResponse decode_response(std::string_view body, const ActionVocabulary& vocabulary) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BackendUnavailable, std::string("unparseable response: ") + e.what());
  }
  try {
    std::vector<double> full(vocabulary.size(), 0.0);
    if (j.contains("probs")) {
      const auto probs = j.at("probs").get<std::vector<double>>();
      if (probs.size() != vocabulary.size())
        throw Error(ErrorKind::BackendUnavailable, "probability vector does not match the vocabulary");
      full = probs;
    } else if (j.contains("ranked")) {
      const auto ranked = j.at("ranked").get<std::vector<std::size_t>>();
      if (ranked.empty()) throw Error(ErrorKind::BackendUnavailable, "empty ranking");
      double total = 0.0;
      for (std::size_t rank = 0; rank < ranked.size(); ++rank) {
        if (ranked[rank] >= vocabulary.size()) throw Error(ErrorKind::BackendUnavailable, "ranked index out of range");
        if (full[ranked[rank]] > 0.0) throw Error(ErrorKind::BackendUnavailable, "duplicate ranked index");
        full[ranked[rank]] = std::exp(-static_cast<double>(rank));
        total += full[ranked[rank]];
      }
      for (auto& v : full) v /= total;
    } else {
      throw Error(ErrorKind::BackendUnavailable, "response carries neither probs nor ranked");
    }
    PolicyDistribution dist;
    for (std::size_t i = 0; i < full.size(); ++i)
      if (full[i] > 0.0) {
        dist.support.push_back(vocabulary.action(i));
        dist.probs.push_back(full[i]);
      }
    try {
      dist.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::BackendUnavailable, e.what());
    }
    return {std::move(dist), parse_forecast(j)};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BackendUnavailable, std::string("malformed response: ") + e.what());
  }
}

std::vector<HighLevelAction> sample_actions(const PolicyDistribution& dist, int n_regions, int draws, Rng& rng) {
  std::vector<HighLevelAction> out;
  out.reserve(static_cast<std::size_t>(n_regions));
  for (int r = 0; r < n_regions; ++r) out.push_back({Verb::NoOp, r});
  std::vector<bool> filled(static_cast<std::size_t>(n_regions), false);
  for (int d = 0; d < draws; ++d) {
    const auto& a = dist.support[draw(dist.probs, rng)];
    if (a.verb == Verb::NoOp || a.region < 0 || a.region >= n_regions) continue;
    if (filled[static_cast<std::size_t>(a.region)]) continue;
    filled[static_cast<std::size_t>(a.region)] = true;
    out[static_cast<std::size_t>(a.region)] = a;
  }
  return out;
}

GlobalPolicy generate_global(const PolicyRequest& request, PolicyBackend& backend, EntropyController& controller,
                             Rng& rng, bool entropy_control, int draws) {
  auto response = backend.generate(request);
  GlobalPolicy g;
  g.raw = std::move(response.distribution);
  g.forecast = std::move(response.forecast);
  g.raw_entropy = entropy(g.raw);
  g.projected = entropy_control ? project_entropy(g.raw, controller.tau) : g.raw;
  g.projected_entropy = entropy(g.projected);
  g.lambda_before = controller.lambda;
  if (entropy_control) controller.lambda = update_lambda(controller.lambda, controller.alpha, g.raw_entropy, controller.tau);
  g.lambda_after = controller.lambda;
  g.actions = sample_actions(g.projected, request.vocabulary.n_regions(), draws, rng);

  double log_prob = 0.0;
  int chosen = 0;
  for (const auto& a : g.actions) {
    if (a.verb == Verb::NoOp) continue;
    const auto it = std::find(g.projected.support.begin(), g.projected.support.end(), a);
    log_prob += std::log(g.projected.probs[static_cast<std::size_t>(it - g.projected.support.begin())]);
    ++chosen;
  }
  const double avg = chosen > 0 ? log_prob / chosen : std::log(g.projected.probs[g.projected.argmax()]);
  g.loss = entropy_loss(avg, g.raw_entropy, controller.tau, g.lambda_after);
  return g;
}

RegionObservation observe_region(const world::WorldState& world, int region, double block_depth) {
  RegionObservation obs;
  obs.region = region;
  const auto& cells = world.region_cells(region);
  double sum = 0.0;
  for (int i : cells) {
    const double d = world.cell(i).water_depth;
    sum += d;
    obs.max_depth = std::max(obs.max_depth, d);
  }
  obs.mean_depth = cells.empty() ? 0.0 : sum / static_cast<double>(cells.size());
  const auto& roads = world.region_road_cells(region);
  obs.road_cells = static_cast<int>(roads.size());
  double deepest = -1.0;
  for (int i : roads) {
    const double d = world.cell(i).water_depth;
    if (d >= block_depth) obs.flooded_roads.emplace_back(world.coord(i), d);
    if (d > deepest) {
      deepest = d;
      obs.deepest_road = world.coord(i);
    }
  }
  std::stable_sort(obs.flooded_roads.begin(), obs.flooded_roads.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return obs;
}

RegionalPlan refine(const HighLevelAction& action, const RegionObservation& obs, double bound) {
  RegionalPlan plan;
  plan.region = action.region;
  plan.provenance = action;
  const std::string region = "region " + std::to_string(action.region);
  std::vector<double> w;
  auto add = [&](std::string text, double weight) {
    plan.candidates.push_back(std::move(text));
    w.push_back(weight);
  };
  const double blocked = obs.road_cells > 0 ? static_cast<double>(obs.flooded_roads.size()) / obs.road_cells : 0.0;
  switch (action.verb) {
    case Verb::RerouteRegion:
      add("reroute traffic around " + region, 0.5 + 0.4 * blocked);
      add("divert buses around " + region, 0.5 - 0.4 * blocked);
      break;
    case Verb::CloseRoad:
      if (!obs.flooded_roads.empty()) {
        for (std::size_t k = 0; k < std::min<std::size_t>(3, obs.flooded_roads.size()); ++k)
          add("close road at cell " + cell_text(obs.flooded_roads[k].first), obs.flooded_roads[k].second);
      } else if (obs.deepest_road) {
        add("close road at cell " + cell_text(*obs.deepest_road), 1.0);
      } else {
        add("monitor " + region, 1.0);
      }
      break;
    case Verb::HoldTransit:
      add("suspend bus service in " + region, 0.6);
      add("hold buses at stops in " + region, 0.4);
      break;
    case Verb::DispatchRelief:
      add("dispatch pumps to " + region, 0.7);
      if (obs.deepest_road) add("deploy drainage relief at cell " + cell_text(*obs.deepest_road), 0.3);
      break;
    case Verb::NoOp:
      break;
  }
  if (w.empty()) return plan;
  double total = 0.0;
  for (double v : w) total += v;
  if (total <= 0.0) std::fill(w.begin(), w.end(), 1.0), total = static_cast<double>(w.size());
  for (double& v : w) v /= total;
  plan.raw_probs = w;
  plan.probs = project_entropy(w, bound, argmax_of(w));
  return plan;
}

RegionalPlan generate_regional(const HighLevelAction& action, const RegionObservation& obs, int n_regions,
                               double bound, int draws, Rng& rng) {
  if (action.region < 0 || action.region >= n_regions)
    throw Error(ErrorKind::UnknownRegion, "region " + std::to_string(action.region));
  auto plan = refine(action, obs, bound);
  if (plan.probs.empty()) return plan;
  for (int d = 0; d < std::max(1, draws); ++d) {
    const auto& text = plan.candidates[draw(plan.probs, rng)];
    if (std::find(plan.directives.begin(), plan.directives.end(), text) == plan.directives.end())
      plan.directives.push_back(text);
  }
  return plan;
}

}  // namespace floodsim::policy

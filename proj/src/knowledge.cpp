#include "floodsim/knowledge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <deque>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "floodsim/format.hpp"
#include "floodsim/rng.hpp"

namespace floodsim::knowledge {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '_') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  if (n == 0.0) return;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

std::vector<double> HashEmbedder::embed(std::string_view text) const {
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw Error(ErrorKind::EmptyQuery, "nothing to embed");
  std::vector<double> v(dim_, 0.0);
  for (const auto& tok : tokens) {
    const std::uint64_t h = fnv1a(tok);
    const std::uint64_t h0 = splitmix64(h), h1 = splitmix64(h + 1);
    const std::size_t b0 = static_cast<std::size_t>(h0 % dim_);
    v[b0] += (h0 >> 63) ? -1.0 : 1.0;
    if (dim_ > 1) {
      // second bucket never coincides with the first, so no token embeds to zero
      const std::size_t b1 = (b0 + 1 + static_cast<std::size_t>(h1 % (dim_ - 1))) % dim_;
      v[b1] += (h1 >> 63) ? -1.0 : 1.0;
    }
  }
  normalize(v);
  if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }))
    throw Error(ErrorKind::EmptyQuery, "tokens cancelled to a zero vector");
  return v;
}

std::string_view to_string(NodeType t) {
  switch (t) {
    case NodeType::Region: return "Region";
    case NodeType::Road: return "Road";
    case NodeType::FloodSpot: return "FloodSpot";
  }
  return "Region";
}

std::string_view to_string(EdgeType t) {
  switch (t) {
    case EdgeType::Adjacent: return "adjacent";
    case EdgeType::Contains: return "contains";
    case EdgeType::Risks: return "risks";
  }
  return "adjacent";
}

NodeType parse_node_type(std::string_view s) {
  if (s == "Region") return NodeType::Region;
  if (s == "Road") return NodeType::Road;
  if (s == "FloodSpot") return NodeType::FloodSpot;
  throw Error(ErrorKind::ConfigError, "unknown node type '" + std::string(s) + "'");
}

EdgeType parse_edge_type(std::string_view s) {
  if (s == "adjacent") return EdgeType::Adjacent;
  if (s == "contains") return EdgeType::Contains;
  if (s == "risks") return EdgeType::Risks;
  throw Error(ErrorKind::ConfigError, "unknown edge type '" + std::string(s) + "'");
}

std::string region_node_id(int region) { return "region:" + std::to_string(region); }
std::string road_node_id(int region) { return "road:" + std::to_string(region); }
std::string flood_spot_node_id(int region) { return "flood:" + std::to_string(region); }

bool KnowledgeGraph::add_node(Node node) {
  if (nodes_.count(node.id)) return false;
  if (node.feature.size() != dim_)
    throw Error(ErrorKind::ConfigError, "feature dimension mismatch for node " + node.id, node.id);
  adjacency_[node.id];
  const std::string id = node.id;
  nodes_.emplace(id, std::move(node));
  return true;
}

bool KnowledgeGraph::add_edge(const Edge& edge) {
  if (!nodes_.count(edge.src) || !nodes_.count(edge.dst))
    throw Error(ErrorKind::DanglingEdge, edge.src + " -> " + edge.dst);
  if (!edges_.insert(edge).second) return false;
  adjacency_[edge.src].insert(edge.dst);
  adjacency_[edge.dst].insert(edge.src);
  return true;
}

const Node& KnowledgeGraph::node(const std::string& id) const {
  const auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorKind::NodeNotFound, id);
  return it->second;
}

const std::set<std::string>& KnowledgeGraph::neighbors(const std::string& id) const {
  const auto it = adjacency_.find(id);
  if (it == adjacency_.end()) throw Error(ErrorKind::NodeNotFound, id);
  return it->second;
}

std::vector<std::string> KnowledgeGraph::node_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, _] : nodes_) ids.push_back(id);
  return ids;
}

std::vector<std::string> KnowledgeGraph::serialize_lines() const {
  std::vector<std::string> lines;
  for (const auto& [id, n] : nodes_) {
    std::string line = "node " + id + " " + std::string(to_string(n.type));
    for (const auto& [k, v] : n.attributes) line += " " + k + "=" + v;
    lines.push_back(std::move(line));
  }
  for (const auto& e : edges_) lines.push_back("edge " + e.src + " " + e.dst + " " + std::string(to_string(e.type)));
  return lines;
}

KnowledgeGraph build_city_graph(const world::WorldState& world, const Embedder& embedder) {
  KnowledgeGraph g(embedder.dim());
  const int n = world.n_regions();
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  const auto depths = world::region_mean_depths(world);
  for (int r = 0; r < n; ++r) {
    double elev = 0.0;
    const auto& cells = world.region_cells(r);
    for (int i : cells) elev += world.cell(i).elevation;
    elev /= static_cast<double>(std::max<std::size_t>(1, cells.size()));
    Node region{region_node_id(r), NodeType::Region,
                {{"row", std::to_string(r / k)}, {"col", std::to_string(r % k)}, {"elevation", fixed(elev, 2)}},
                {}};
    region.feature = embedder.embed("region region_" + std::to_string(r) + " row_" + std::to_string(r / k) +
                                    " col_" + std::to_string(r % k) + (elev < 2.0 ? " lowland" : " upland"));
    g.add_node(std::move(region));
    const auto& roads = world.region_road_cells(r);
    if (!roads.empty()) {
      Node road{road_node_id(r), NodeType::Road, {{"cells", std::to_string(roads.size())}}, {}};
      road.feature = embedder.embed("road corridor region_" + std::to_string(r));
      g.add_node(std::move(road));
    }
  }
  for (int r = 0; r < n; ++r) {
    const int row = r / k, col = r % k;
    const int nbrs[4][2] = {{row - 1, col}, {row + 1, col}, {row, col - 1}, {row, col + 1}};
    for (const auto& nb : nbrs) {
      if (nb[0] < 0 || nb[1] < 0 || nb[0] >= k || nb[1] >= k) continue;
      g.add_edge({region_node_id(r), region_node_id(nb[0] * k + nb[1]), EdgeType::Adjacent});
    }
    if (g.has_node(road_node_id(r))) g.add_edge({region_node_id(r), road_node_id(r), EdgeType::Contains});
  }
  return g;
}

void write_graph(std::ostream& out, const KnowledgeGraph& graph) {
  nlohmann::json j;
  j["dim"] = graph.dim();
  j["nodes"] = nlohmann::json::array();
  for (const auto& [id, n] : graph.nodes())
    j["nodes"].push_back({{"id", id}, {"type", to_string(n.type)}, {"attributes", n.attributes}, {"feature", n.feature}});
  j["edges"] = nlohmann::json::array();
  for (const auto& e : graph.edges()) j["edges"].push_back({{"src", e.src}, {"dst", e.dst}, {"type", to_string(e.type)}});
  out << j.dump(1) << '\n';
}

KnowledgeGraph read_graph(std::istream& in) {
  try {
    const auto j = nlohmann::json::parse(in);
    KnowledgeGraph g(j.value("dim", std::size_t{64}));
    for (const auto& n : j.at("nodes")) {
      Node node{n.at("id").get<std::string>(), parse_node_type(n.at("type").get<std::string>()),
                n.value("attributes", std::map<std::string, std::string>{}),
                n.at("feature").get<std::vector<double>>()};
      normalize(node.feature);
      g.add_node(std::move(node));
    }
    for (const auto& e : j.at("edges"))
      g.add_edge({e.at("src").get<std::string>(), e.at("dst").get<std::string>(),
                  parse_edge_type(e.at("type").get<std::string>())});
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigError, e.what(), "graph");
  }
}

std::vector<double> neighborhood_embed(const KnowledgeGraph& graph, const std::string& node, int depth) {
  if (!graph.has_node(node)) throw Error(ErrorKind::NodeNotFound, node);
  depth = std::max(depth, 0);

  // Hop distance from the target, limited to `depth`.
  std::map<std::string, int> dist{{node, 0}};
  std::deque<std::string> frontier{node};
  while (!frontier.empty()) {
    const auto cur = frontier.front();
    frontier.pop_front();
    const int d = dist[cur];
    if (d == depth) continue;
    for (const auto& nb : graph.neighbors(cur))
      if (dist.emplace(nb, d + 1).second) frontier.push_back(nb);
  }

  std::map<std::string, std::vector<double>> layer;
  for (const auto& [id, _] : dist) {
    auto v = graph.node(id).feature;
    normalize(v);
    layer[id] = std::move(v);
  }
  for (int k = 1; k <= depth; ++k) {
    std::map<std::string, std::vector<double>> next;
    for (const auto& [id, d] : dist) {
      if (d > depth - k) continue;
      const auto& self = layer.at(id);
      const auto& nbrs = graph.neighbors(id);
      if (nbrs.empty()) {
        next[id] = self;
        continue;
      }
      std::vector<double> mean(self.size(), 0.0);
      for (const auto& nb : nbrs) {
        const auto& v = layer.at(nb);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v[i];
      }
      std::vector<double> mixed(self.size());
      const double inv = 1.0 / static_cast<double>(nbrs.size());
      for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = 0.5 * self[i] + 0.5 * mean[i] * inv;
      normalize(mixed);
      next[id] = std::move(mixed);
    }
    layer = std::move(next);
  }
  return layer.at(node);
}

KnowledgeGraph extract_subgraph(const KnowledgeGraph& graph, const std::vector<std::string>& seeds, int hops) {
  if (seeds.empty()) throw Error(ErrorKind::EmptySeed, "no seed nodes");
  std::set<std::string> keep;
  std::deque<std::pair<std::string, int>> frontier;
  for (const auto& s : seeds) {
    if (!graph.has_node(s)) throw Error(ErrorKind::NodeNotFound, s);
    if (keep.insert(s).second) frontier.emplace_back(s, 0);
  }
  while (!frontier.empty()) {
    const auto [cur, d] = frontier.front();
    frontier.pop_front();
    if (d >= hops) continue;
    for (const auto& nb : graph.neighbors(cur))
      if (keep.insert(nb).second) frontier.emplace_back(nb, d + 1);
  }
  KnowledgeGraph sub(graph.dim());
  for (const auto& id : keep) sub.add_node(graph.node(id));
  for (const auto& e : graph.edges())
    if (keep.count(e.src) && keep.count(e.dst)) sub.add_edge(e);
  return sub;
}

KnowledgeGraph update_graph(KnowledgeGraph graph, const std::vector<Node>& new_nodes,
                            const std::vector<Edge>& new_edges) {
  for (const auto& e : new_edges) {
    auto known = [&](const std::string& id) {
      return graph.has_node(id) ||
             std::any_of(new_nodes.begin(), new_nodes.end(), [&](const Node& n) { return n.id == id; });
    };
    if (!known(e.src) || !known(e.dst)) throw Error(ErrorKind::DanglingEdge, e.src + " -> " + e.dst);
  }
  for (const auto& n : new_nodes) graph.add_node(n);
  for (const auto& e : new_edges) graph.add_edge(e);
  return graph;
}

void SegmentStore::add(int id, std::string text, const Embedder& embedder) {
  if (ids_.count(id)) throw Error(ErrorKind::ConfigError, "duplicate segment id " + std::to_string(id));
  std::vector<double> emb;
  try {
    emb = embedder.embed(text);
  } catch (const Error&) {
    throw Error(ErrorKind::ConfigError, "segment " + std::to_string(id) + " has no embeddable text");
  }
  ids_.insert(id);
  segments_.push_back({id, std::move(text), std::move(emb)});
}

SegmentStore read_segments(std::istream& in, const Embedder& embedder) {
  SegmentStore store;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(ErrorKind::ConfigError, "expected <id>\\t<text>", "segments[" + std::to_string(line_no) + "]");
    int id = 0;
    try {
      id = std::stoi(line.substr(0, tab));
    } catch (const std::exception&) {
      throw Error(ErrorKind::ConfigError, "segment id is not an integer", "segments[" + std::to_string(line_no) + "]");
    }
    store.add(id, line.substr(tab + 1), embedder);
  }
  return store;
}

void write_segments(std::ostream& out, const SegmentStore& store) {
  for (const auto& s : store.segments()) out << s.id << '\t' << s.text << '\n';
}

SegmentStore synthesize_segments(const world::WorldState& world, const Embedder& embedder, std::uint64_t seed) {
  Rng rng(substream_seed(seed, "segments"));
  const int n = world.n_regions();
  std::vector<std::pair<double, int>> by_elevation;
  for (int r = 0; r < n; ++r) {
    double elev = 0.0;
    const auto& cells = world.region_cells(r);
    for (int i : cells) elev += world.cell(i).elevation;
    by_elevation.emplace_back(elev / static_cast<double>(std::max<std::size_t>(1, cells.size())), r);
  }
  std::sort(by_elevation.begin(), by_elevation.end());
  static const char* const kReports[] = {
      "emergency report: underpass in region_%d flooded during heavy rain, buses stranded",
      "historical log: region_%d waterlogging blocked the main corridor, pumps cleared it within hours",
      "emergency report: residents in region_%d cancelled trips after roads flooded",
  };
  static const char* const kAdvice[] = {
      "operations note: reroute traffic around region_%d when rainfall is sustained",
      "operations note: close flooded road segments in region_%d early to avoid stranding",
      "operations note: dispatch drainage relief to region_%d before the peak",
  };
  static const char* const kCalm[] = {
      "historical log: region_%d stays passable in light rain",
      "historical log: region_%d corridor carries heavy commuter traffic at peak hours",
  };
  SegmentStore store;
  int id = 0;
  char buf[192];
  for (std::size_t rank = 0; rank < by_elevation.size(); ++rank) {
    const int region = by_elevation[rank].second;
    const bool low = rank < by_elevation.size() / 3;
    if (low) {
      std::snprintf(buf, sizeof buf, kReports[rng.below(3)], region);
      store.add(id++, buf, embedder);
      std::snprintf(buf, sizeof buf, kAdvice[rng.below(3)], region);
      store.add(id++, buf, embedder);
    } else {
      std::snprintf(buf, sizeof buf, kCalm[rng.below(2)], region);
      store.add(id++, buf, embedder);
    }
  }
  return store;
}

std::vector<ScoredSegment> retrieve_topk(std::span<const double> query, const SegmentStore& store, std::size_t k) {
  std::vector<ScoredSegment> scored;
  scored.reserve(store.size());
  for (const auto& s : store.segments()) scored.push_back({s.id, s.text, cosine(query, s.embedding)});
  auto better = [](const ScoredSegment& a, const ScoredSegment& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  };
  const std::size_t keep = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), better);
  scored.resize(keep);
  return scored;
}

std::vector<int> StateSummary::seed_regions(double threshold) const {
  std::set<int> seeds(targeted_regions.begin(), targeted_regions.end());
  for (std::size_t i = 0; i < flood_by_region.size(); ++i)
    if (flood_by_region[i] > threshold) seeds.insert(static_cast<int>(i));
  for (std::size_t i = 0; i < congestion_by_region.size(); ++i)
    if (congestion_by_region[i] > threshold) seeds.insert(static_cast<int>(i));
  return {seeds.begin(), seeds.end()};
}

std::string StateSummary::serialize(double threshold) const {
  std::ostringstream out;
  out << "step " << step << " rain " << fixed(rain, 3) << " f " << fixed(f, 4) << " t " << fixed(t, 4) << " c "
      << fixed(c, 4) << " r " << fixed(r, 4) << " J " << fixed(J, 4) << "\n";
  auto list = [&](const char* label, const std::vector<double>& v) {
    out << label;
    bool any = false;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] > threshold) {
        out << " region_" << i;
        any = true;
      }
    if (!any) out << " none";
    out << "\n";
  };
  list("flooded", flood_by_region);
  list("congested", congestion_by_region);
  out << "targeted";
  if (targeted_regions.empty()) out << " none";
  for (int r : targeted_regions) out << " region_" << r;
  out << "\ntrips spawned " << spawned << " enroute " << enroute << " arrived " << arrived << " cancelled "
      << cancelled;
  return out.str();
}

std::vector<double> embed_state(const StateSummary& state, const Embedder& embedder) {
  return embedder.embed(state.serialize());
}

namespace {

std::string section(std::string_view text, std::string_view tag, bool required) {
  const std::string open = "<" + std::string(tag) + ">\n";
  const std::string close = "</" + std::string(tag) + ">";
  const auto b = text.find(open);
  if (b == std::string_view::npos) {
    if (required) throw Error(ErrorKind::ConfigError, "prompt lacks section " + std::string(tag));
    return {};
  }
  const auto e = text.find(close, b + open.size());
  if (e == std::string_view::npos) throw Error(ErrorKind::ConfigError, "unterminated section " + std::string(tag));
  std::string body(text.substr(b + open.size(), e - b - open.size()));
  if (!body.empty() && body.back() == '\n') body.pop_back();
  return body;
}

std::vector<std::string> lines_of(const std::string& body) {
  std::vector<std::string> lines;
  std::istringstream in(body);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

constexpr std::string_view kEmpty = "(empty)";

}  // namespace

std::string HybridPrompt::serialize() const {
  std::ostringstream out;
  out << "<state>\n" << state << "\n</state>\n";
  out << "<subgraph>\n";
  if (subgraph.empty()) out << kEmpty << "\n";
  for (const auto& l : subgraph) out << l << "\n";
  out << "</subgraph>\n<segments>\n";
  if (segments.empty()) out << kEmpty << "\n";
  for (const auto& s : segments) out << "#" << s.id << " " << fixed(s.score, 6) << " " << s.text << "\n";
  out << "</segments>\n<task>\n" << task << "\n</task>\n";
  if (feedback) {
    out << "<feedback>\n";
    out << "delta_e " << fixed(feedback->delta_e, 6) << "\n";
    for (const auto& [k, v] : feedback->metric_deltas) out << "delta " << k << " " << fixed(v, 6) << "\n";
    out << "failed";
    if (feedback->failed_metrics.empty()) out << " none";
    for (const auto& m : feedback->failed_metrics) out << " " << m;
    out << "\n";
    for (const auto& r : feedback->rejected) out << "rejected " << r << "\n";
    out << "</feedback>\n";
  }
  return out.str();
}

HybridPrompt HybridPrompt::parse(std::string_view text) {
  HybridPrompt p;
  p.state = section(text, "state", true);
  for (auto& l : lines_of(section(text, "subgraph", true)))
    if (l != kEmpty) p.subgraph.push_back(std::move(l));
  for (const auto& l : lines_of(section(text, "segments", true))) {
    if (l == kEmpty) continue;
    std::istringstream in(l);
    char hash = 0;
    ScoredSegment s;
    in >> hash >> s.id >> s.score;
    in.get();
    std::getline(in, s.text);
    p.segments.push_back(std::move(s));
  }
  p.task = section(text, "task", true);
  if (text.find("<feedback>\n") != std::string_view::npos) {
    FailureFeedback fb;
    for (const auto& l : lines_of(section(text, "feedback", true))) {
      std::istringstream in(l);
      std::string key;
      in >> key;
      if (key == "delta_e") {
        in >> fb.delta_e;
      } else if (key == "delta") {
        std::string name;
        double v = 0.0;
        in >> name >> v;
        fb.metric_deltas[name] = v;
      } else if (key == "failed") {
        std::string m;
        while (in >> m)
          if (m != "none") fb.failed_metrics.push_back(m);
      } else if (key == "rejected") {
        in.get();
        std::string rest;
        std::getline(in, rest);
        fb.rejected.push_back(rest);
      }
    }
    p.feedback = std::move(fb);
  }
  return p;
}

std::vector<int> HybridPrompt::flood_spot_regions() const {
  std::vector<int> out;
  const std::string prefix = "node flood:";
  for (const auto& l : subgraph) {
    if (l.rfind(prefix, 0) != 0) continue;
    out.push_back(std::stoi(l.substr(prefix.size())));
  }
  std::sort(out.begin(), out.end());
  return out;
}

HybridPrompt build_prompt(const std::string& state, const KnowledgeGraph& subgraph,
                          const std::vector<ScoredSegment>& segments, const std::string& task,
                          const std::optional<FailureFeedback>& feedback) {
  if (task.empty()) throw Error(ErrorKind::MissingTask, "prompt needs a task directive");
  HybridPrompt p;
  p.state = state;
  p.subgraph = subgraph.serialize_lines();
  p.segments = segments;
  p.task = task;
  p.feedback = feedback;
  return p;
}

}  // namespace floodsim::knowledge

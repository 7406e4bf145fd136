#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "floodsim/world.hpp"

namespace floodsim::knowledge {

std::vector<std::string> tokenize(std::string_view text);
double cosine(std::span<const double> a, std::span<const double> b);
void normalize(std::vector<double>& v);

class Embedder {
public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  // Unit-norm embedding; throws EmptyQuery for text without tokens.
  virtual std::vector<double> embed(std::string_view text) const = 0;
};

// Signed feature hashing of lowercase alphanumeric tokens. Each token lands in
// two buckets to keep single-token collisions from aliasing whole texts.
class HashEmbedder final : public Embedder {
public:
  explicit HashEmbedder(std::size_t dim = 64) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  std::vector<double> embed(std::string_view text) const override;

private:
  std::size_t dim_;
};

enum class NodeType { Region, Road, FloodSpot };
enum class EdgeType { Adjacent, Contains, Risks };

std::string_view to_string(NodeType t);
std::string_view to_string(EdgeType t);
NodeType parse_node_type(std::string_view s);
EdgeType parse_edge_type(std::string_view s);

struct Node {
  std::string id;
  NodeType type = NodeType::Region;
  std::map<std::string, std::string> attributes;
  std::vector<double> feature;
};

struct Edge {
  std::string src;
  std::string dst;
  EdgeType type = EdgeType::Adjacent;

  friend auto operator<=>(const Edge&, const Edge&) = default;
};

std::string region_node_id(int region);
std::string road_node_id(int region);
std::string flood_spot_node_id(int region);

class KnowledgeGraph {
public:
  explicit KnowledgeGraph(std::size_t dim = 64) : dim_(dim) {}

  std::size_t dim() const { return dim_; }

  // Returns false when a node with this id already exists (left unchanged).
  bool add_node(Node node);
  // Returns false for a duplicate triple; throws DanglingEdge for unknown endpoints.
  bool add_edge(const Edge& edge);

  bool has_node(const std::string& id) const { return nodes_.count(id) != 0; }
  const Node& node(const std::string& id) const;
  const std::map<std::string, Node>& nodes() const { return nodes_; }
  const std::set<Edge>& edges() const { return edges_; }
  // Undirected neighbourhood, sorted by id.
  const std::set<std::string>& neighbors(const std::string& id) const;

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  // Canonical one-line-per-record form used inside prompts.
  std::vector<std::string> serialize_lines() const;

  friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
    return a.edges_ == b.edges_ && a.node_ids() == b.node_ids();
  }

private:
  std::vector<std::string> node_ids() const;

  std::size_t dim_;
  std::map<std::string, Node> nodes_;
  std::set<Edge> edges_;
  std::map<std::string, std::set<std::string>> adjacency_;
};

// Region and road-corridor nodes for a world, with adjacency and containment.
KnowledgeGraph build_city_graph(const world::WorldState& world, const Embedder& embedder);

// Graph snapshot: JSON with "nodes" (id, type, attributes, feature) and "edges" (src, dst, type).
void write_graph(std::ostream& out, const KnowledgeGraph& graph);
KnowledgeGraph read_graph(std::istream& in);

// depth 0: the node's normalized feature; depth k: normalize(0.5 * self_{k-1}
// + 0.5 * mean of neighbours' depth k-1 vectors). Isolated nodes keep their own.
std::vector<double> neighborhood_embed(const KnowledgeGraph& graph, const std::string& node, int depth);

// Induced subgraph on every node within `hops` undirected hops of the seeds.
KnowledgeGraph extract_subgraph(const KnowledgeGraph& graph, const std::vector<std::string>& seeds, int hops);

// G(t+1) = G(t) united with the new nodes and edges, idempotent.
// Edges may reference nodes in either set; others throw DanglingEdge.
KnowledgeGraph update_graph(KnowledgeGraph graph, const std::vector<Node>& new_nodes,
                            const std::vector<Edge>& new_edges);

struct Segment {
  int id = 0;
  std::string text;
  std::vector<double> embedding;
};

class SegmentStore {
public:
  // Throws ConfigError for duplicate ids or texts that embed to nothing.
  void add(int id, std::string text, const Embedder& embedder);
  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t size() const { return segments_.size(); }

private:
  std::vector<Segment> segments_;
  std::set<int> ids_;
};

// Segment store file: "<id>\t<text>" per line.
SegmentStore read_segments(std::istream& in, const Embedder& embedder);
void write_segments(std::ostream& out, const SegmentStore& store);

// Seeded report/log corpus describing the world's low-lying regions and corridors.
SegmentStore synthesize_segments(const world::WorldState& world, const Embedder& embedder, std::uint64_t seed);

struct ScoredSegment {
  int id = 0;
  std::string text;
  double score = 0.0;

  friend bool operator==(const ScoredSegment&, const ScoredSegment&) = default;
};

// Descending cosine similarity, ascending id on ties, at most k results.
std::vector<ScoredSegment> retrieve_topk(std::span<const double> query, const SegmentStore& store, std::size_t k);

// Condensed system state s_t.
struct StateSummary {
  int step = 0;
  double rain = 0.0;
  double f = 0.5, t = 0.5, c = 0.0, r = 0.0, J = 0.0;
  std::vector<double> flood_by_region;       // f_a
  std::vector<double> congestion_by_region;  // t_a
  std::vector<double> depth_by_region;       // mean depth, m
  std::vector<double> blocked_by_region;     // fraction of road cells above the resident block depth
  std::vector<int> targeted_regions;         // regions with instructions in force
  long spawned = 0, enroute = 0, arrived = 0, cancelled = 0;

  // Regions with f_a or t_a above threshold, plus targeted regions; sorted, unique.
  std::vector<int> seed_regions(double threshold = 0.7) const;
  std::string serialize(double threshold = 0.7) const;
};

std::vector<double> embed_state(const StateSummary& state, const Embedder& embedder);

struct FailureFeedback {
  double delta_e = 0.0;
  std::map<std::string, double> metric_deltas;  // executed - planned
  std::vector<std::string> failed_metrics;
  std::vector<std::string> rejected;

  friend bool operator==(const FailureFeedback&, const FailureFeedback&) = default;
};

struct HybridPrompt {
  std::string state;
  std::vector<std::string> subgraph;  // serialized graph lines
  std::vector<ScoredSegment> segments;
  std::string task;
  std::optional<FailureFeedback> feedback;

  std::string serialize() const;
  // Inverse of serialize; segment scores are kept to six decimals.
  static HybridPrompt parse(std::string_view text);

  // Regions that appear as FloodSpot nodes in the subgraph.
  std::vector<int> flood_spot_regions() const;
};

// Throws MissingTask for an empty task.
HybridPrompt build_prompt(const std::string& state, const KnowledgeGraph& subgraph,
                          const std::vector<ScoredSegment>& segments, const std::string& task,
                          const std::optional<FailureFeedback>& feedback);

}  // namespace floodsim::knowledge

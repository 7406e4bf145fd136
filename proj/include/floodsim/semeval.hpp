#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "floodsim/knowledge.hpp"
#include "floodsim/metrics.hpp"

namespace floodsim::semeval {

struct Response {
  std::string producer;
  std::string text;
  std::vector<double> embedding;
};

struct ResponseSet {
  std::string prompt_id;
  std::vector<Response> responses;
};

ResponseSet make_response_set(std::string prompt_id, const std::vector<std::string>& texts,
                              const knowledge::Embedder& embedder, const std::string& producer = "backend");

// Mean pairwise cosine over one set, from the norm of the embedding sum.
// Exact for unit vectors; other inputs are normalized first.
double mean_pairwise_similarity(const ResponseSet& set);
// Explicit loop over every pair, for checking the above.
double brute_force_similarity(const ResponseSet& set);

// Mean over prompts of the per-set mean similarity / distance.
// Throws InsufficientResponses for any set with fewer than two responses.
double scs(const std::vector<ResponseSet>& sets);
double sds(const std::vector<ResponseSet>& sets);

struct SemanticRow {
  std::string setting;
  double stability = 0.0;
  std::optional<double> scs;
  std::optional<double> sds;

  friend bool operator==(const SemanticRow&, const SemanticRow&) = default;
};

// Stability is the mean of the f, t, c, r variances across runs.
SemanticRow stability_report(const std::string& setting, const std::vector<std::vector<metrics::MetricsSnapshot>>& runs,
                             const std::vector<ResponseSet>& consistency_sets,
                             const std::vector<ResponseSet>& diversity_sets);

// CSV with header "Module Setting,Stability,SCS,SDS"; missing scores are blank.
void write_semantic_report(std::ostream& out, const std::vector<SemanticRow>& rows);
std::vector<SemanticRow> read_semantic_report(std::istream& in);
// Parses one row: either CSV or a LaTeX table row such as "Full & 0.0047 & 0.872 & 0.443 \\".
SemanticRow parse_semantic_row(const std::string& line);

}  // namespace floodsim::semeval

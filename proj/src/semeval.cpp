#include "floodsim/semeval.hpp"

#include <istream>
#include <ostream>
#include <sstream>

#include "floodsim/format.hpp"

namespace floodsim::semeval {

namespace {

void require_pairs(const std::vector<ResponseSet>& sets) {
  for (const auto& s : sets)
    if (s.responses.size() < 2)
      throw Error(ErrorKind::InsufficientResponses, "prompt '" + s.prompt_id + "' has fewer than two responses");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::optional<double> optional_number(const std::string& s) {
  const auto t = trim(s);
  if (t.empty() || t == "-") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw Error(ErrorKind::ConfigError, "bad number '" + t + "'");
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::ConfigError, "bad number '" + t + "'");
  }
}

std::string optional_text(const std::optional<double>& v) { return v ? exact(*v) : ""; }

}  // namespace

ResponseSet make_response_set(std::string prompt_id, const std::vector<std::string>& texts,
                              const knowledge::Embedder& embedder, const std::string& producer) {
  ResponseSet set{std::move(prompt_id), {}};
  for (std::size_t i = 0; i < texts.size(); ++i)
    set.responses.push_back({producer + ":" + std::to_string(i), texts[i], embedder.embed(texts[i])});
  return set;
}

double mean_pairwise_similarity(const ResponseSet& set) {
  const auto n = set.responses.size();
  if (n < 2) throw Error(ErrorKind::InsufficientResponses, "prompt '" + set.prompt_id + "' has fewer than two responses");
  const auto dim = set.responses.front().embedding.size();
  // sum_{i<j} u_i.u_j = (|sum u|^2 - sum |u_i|^2) / 2, with |u_i| = 1 after normalizing.
  std::vector<double> sum(dim, 0.0);
  for (const auto& r : set.responses) {
    auto u = r.embedding;
    if (u.size() != dim) throw Error(ErrorKind::InsufficientResponses, "embedding dimensions differ");
    knowledge::normalize(u);
    for (std::size_t k = 0; k < dim; ++k) sum[k] += u[k];
  }
  double sq = 0.0;
  for (double v : sum) sq += v * v;
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  return (sq - static_cast<double>(n)) / 2.0 / pairs;
}

double brute_force_similarity(const ResponseSet& set) {
  const auto n = set.responses.size();
  if (n < 2) throw Error(ErrorKind::InsufficientResponses, "prompt '" + set.prompt_id + "' has fewer than two responses");
  double total = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j, ++pairs)
      total += knowledge::cosine(set.responses[i].embedding, set.responses[j].embedding);
  return total / static_cast<double>(pairs);
}

double scs(const std::vector<ResponseSet>& sets) {
  require_pairs(sets);
  if (sets.empty()) throw Error(ErrorKind::InsufficientResponses, "no prompts");
  double total = 0.0;
  for (const auto& s : sets) total += mean_pairwise_similarity(s);
  return total / static_cast<double>(sets.size());
}

double sds(const std::vector<ResponseSet>& sets) {
  require_pairs(sets);
  if (sets.empty()) throw Error(ErrorKind::InsufficientResponses, "no prompts");
  double total = 0.0;
  for (const auto& s : sets) total += 1.0 - mean_pairwise_similarity(s);
  return total / static_cast<double>(sets.size());
}

SemanticRow stability_report(const std::string& setting, const std::vector<std::vector<metrics::MetricsSnapshot>>& runs,
                             const std::vector<ResponseSet>& consistency_sets,
                             const std::vector<ResponseSet>& diversity_sets) {
  SemanticRow row;
  row.setting = setting;
  row.stability = metrics::run_stability(runs).mean_fctr();
  if (!consistency_sets.empty()) row.scs = scs(consistency_sets);
  if (!diversity_sets.empty()) row.sds = sds(diversity_sets);
  return row;
}

void write_semantic_report(std::ostream& out, const std::vector<SemanticRow>& rows) {
  out << "Module Setting,Stability,SCS,SDS\n";
  for (const auto& r : rows)
    out << r.setting << ',' << exact(r.stability) << ',' << optional_text(r.scs) << ',' << optional_text(r.sds) << '\n';
}

SemanticRow parse_semantic_row(const std::string& line) {
  std::string text = line;
  const char sep = text.find('&') != std::string::npos ? '&' : ',';
  if (sep == '&') {
    const auto end = text.find("\\\\");
    if (end != std::string::npos) text = text.substr(0, end);
  }
  std::vector<std::string> fields;
  std::stringstream ss(text);
  for (std::string f; std::getline(ss, f, sep);) fields.push_back(trim(f));
  if (!text.empty() && text.back() == sep) fields.emplace_back();
  if (fields.size() != 4) throw Error(ErrorKind::ConfigError, "semantic row needs four fields: '" + line + "'");
  SemanticRow row;
  row.setting = fields[0];
  const auto stability = optional_number(fields[1]);
  if (!stability) throw Error(ErrorKind::ConfigError, "missing stability in '" + line + "'");
  row.stability = *stability;
  row.scs = optional_number(fields[2]);
  row.sds = optional_number(fields[3]);
  return row;
}

std::vector<SemanticRow> read_semantic_report(std::istream& in) {
  std::vector<SemanticRow> rows;
  std::string line;
  if (!std::getline(in, line) || trim(line) != "Module Setting,Stability,SCS,SDS")
    throw Error(ErrorKind::ConfigError, "missing semantic report header");
  while (std::getline(in, line))
    if (!trim(line).empty()) rows.push_back(parse_semantic_row(line));
  return rows;
}

}  // namespace floodsim::semeval

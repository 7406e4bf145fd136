#include "floodsim/translate.hpp"

#include <array>
#include <ostream>
#include <regex>

#include "floodsim/knowledge.hpp"

namespace floodsim::translate {

namespace {

struct Keyword {
  std::string_view word;
  Tag tag;
};

constexpr std::array kKeywords{
    Keyword{"reroute", Tag::Routing},   Keyword{"divert", Tag::Routing},    Keyword{"detour", Tag::Routing},
    Keyword{"avoid", Tag::Routing},     Keyword{"close", Tag::Obstacle},    Keyword{"block", Tag::Obstacle},
    Keyword{"barricade", Tag::Obstacle}, Keyword{"suspend", Tag::Stop},     Keyword{"hold", Tag::Stop},
    Keyword{"halt", Tag::Stop},         Keyword{"stop", Tag::Stop},         Keyword{"pause", Tag::Stop},
    Keyword{"dispatch", Tag::Relief},   Keyword{"deploy", Tag::Relief},     Keyword{"pump", Tag::Relief},
    Keyword{"pumps", Tag::Relief},      Keyword{"relief", Tag::Relief},     Keyword{"drain", Tag::Relief},
    Keyword{"drainage", Tag::Relief},   Keyword{"monitor", Tag::NoOp},      Keyword{"observe", Tag::NoOp},
};

std::optional<Tag> keyword_tag(std::string_view token) {
  for (const auto& k : kKeywords)
    if (k.word == token) return k.tag;
  return std::nullopt;
}

std::optional<GridCoord> parse_cell(const std::string& text) {
  static const std::regex cell_re(R"(\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\))");
  std::smatch m;
  if (!std::regex_search(text, m, cell_re)) return std::nullopt;
  return GridCoord{std::stoi(m[1].str()), std::stoi(m[2].str())};
}

std::string anchor_text(const Instruction& i) {
  if (!i.cell) return "";
  return std::to_string(i.cell->row) + ":" + std::to_string(i.cell->col);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + '"';
}

}  // namespace

std::string_view to_string(Tag tag) {
  switch (tag) {
    case Tag::Routing: return "Routing";
    case Tag::Obstacle: return "Obstacle";
    case Tag::Stop: return "Stop";
    case Tag::Relief: return "Relief";
    case Tag::NoOp: return "NoOp";
  }
  return "NoOp";
}

Tag classify_command(std::string_view text, std::vector<std::string>* warnings) {
  for (const auto& token : knowledge::tokenize(text))
    if (auto tag = keyword_tag(token)) return *tag;
  if (warnings) warnings->push_back("unclassified directive '" + std::string(text) + "' treated as NoOp");
  return Tag::NoOp;
}

std::vector<Instruction> translate(const policy::RegionalPlan& plan, int step, int window) {
  std::vector<Instruction> out;
  out.reserve(plan.directives.size());
  for (const auto& directive : plan.directives) {
    const auto tokens = knowledge::tokenize(directive);
    if (tokens.empty() || !keyword_tag(tokens.front()))
      throw Error(ErrorKind::UnknownDirective, "'" + directive + "'");
    Instruction instr;
    instr.tag = classify_command(directive);
    instr.region = plan.region;
    instr.cell = parse_cell(directive);
    instr.params["verb"] = tokens.front();
    instr.start = step;
    instr.end = step + std::max(1, window) - 1;
    instr.directive = directive;
    out.push_back(std::move(instr));
  }
  return out;
}

WrapResult wrap_accuracy(const Instruction& instr, const world::WorldState& world, const WrapOptions& options) {
  WrapResult res;
  auto reject = [&](std::string reason) {
    res.reason = std::move(reason);
    return res;
  };
  if (instr.region < 0 || instr.region >= world.n_regions()) return reject("region out of range");
  if (instr.start > instr.end) return reject("empty window");
  if (instr.start >= options.horizon) return reject("window starts past the horizon");

  Instruction out = instr;
  out.end = std::min(out.end, options.horizon - 1);
  const auto& roads = world.region_road_cells(instr.region);

  if (out.cell) {
    const auto c = *out.cell;
    const bool on_road = world.contains(c) && world.cell(c).is_road && world.cell(c).region_id == instr.region;
    if (!on_road) {
      if (roads.empty()) return reject("no road cell in region " + std::to_string(instr.region));
      int best = roads.front();
      int best_d = manhattan(c, world.coord(best));
      for (int i : roads) {
        const int d = manhattan(c, world.coord(i));
        if (d < best_d) best = i, best_d = d;
      }
      out.params["snapped_from"] = std::to_string(c.row) + ":" + std::to_string(c.col);
      out.cell = world.coord(best);
    }
  }
  if (out.tag == Tag::Obstacle && !out.cell) return reject("obstacle without cell anchor");
  if (out.tag == Tag::Routing && !roads.empty()) {
    const bool all_flooded = std::all_of(roads.begin(), roads.end(), [&](int i) {
      return world.cell(i).water_depth >= options.block_depth;
    });
    if (all_flooded) return reject("infeasible routing: region " + std::to_string(instr.region) + " fully flooded");
  }
  res.instruction = std::move(out);
  return res;
}

InstructionBoard::InstructionBoard(int n_regions, double relief_multiplier)
    : n_regions_(n_regions),
      relief_multiplier_(relief_multiplier),
      routing_(static_cast<std::size_t>(n_regions)),
      stop_(static_cast<std::size_t>(n_regions)),
      relief_(static_cast<std::size_t>(n_regions)) {}

void InstructionBoard::dispatch(const Instruction& instr, const world::WorldState& world) {
  if (instr.region < 0 || instr.region >= n_regions_) throw Error(ErrorKind::UnknownRegion, std::to_string(instr.region));
  const auto r = static_cast<std::size_t>(instr.region);
  const std::pair w{instr.start, instr.end};
  switch (instr.tag) {
    case Tag::Obstacle:
      if (instr.cell && world.contains(*instr.cell)) closed_[world.index(*instr.cell)].push_back(w);
      break;
    case Tag::Routing: routing_[r].push_back(w); break;
    case Tag::Stop: stop_[r].push_back(w); break;
    case Tag::Relief: relief_[r].push_back(w); break;
    case Tag::NoOp: break;
  }
  log_.push_back(instr);
}

bool InstructionBoard::open(const Windows& w, int step) {
  return std::any_of(w.begin(), w.end(), [&](const auto& p) { return p.first <= step && step <= p.second; });
}

bool InstructionBoard::is_closed(int cell_index, int step) const {
  const auto it = closed_.find(cell_index);
  return it != closed_.end() && open(it->second, step);
}

bool InstructionBoard::avoids_region(int region, int step) const {
  return region >= 0 && region < n_regions_ && open(routing_[static_cast<std::size_t>(region)], step);
}

bool InstructionBoard::transit_stopped(int region, int step) const {
  return region >= 0 && region < n_regions_ && open(stop_[static_cast<std::size_t>(region)], step);
}

std::vector<double> InstructionBoard::drainage_multipliers(int step) const {
  std::vector<double> m(static_cast<std::size_t>(n_regions_), 1.0);
  for (std::size_t r = 0; r < m.size(); ++r)
    if (open(relief_[r], step)) m[r] = relief_multiplier_;
  return m;
}

std::vector<int> InstructionBoard::active_regions(int step) const {
  std::vector<bool> on(static_cast<std::size_t>(n_regions_), false);
  for (const auto& i : log_)
    if (i.tag != Tag::NoOp && i.start <= step && step <= i.end) on[static_cast<std::size_t>(i.region)] = true;
  std::vector<int> out;
  for (int r = 0; r < n_regions_; ++r)
    if (on[static_cast<std::size_t>(r)]) out.push_back(r);
  return out;
}

void write_instruction_log(std::ostream& out, const std::vector<InstructionLogRow>& rows) {
  out << "cycle,region,tag,anchor,window_start,window_end,status,reason,directive\n";
  for (const auto& row : rows) {
    const auto& i = row.instruction;
    out << row.cycle << ',' << i.region << ',' << to_string(i.tag) << ',' << anchor_text(i) << ',' << i.start << ','
        << i.end << ',' << (row.accepted ? "accepted" : "rejected") << ',' << csv_field(row.reason) << ','
        << csv_field(i.directive) << '\n';
  }
}

}  // namespace floodsim::translate

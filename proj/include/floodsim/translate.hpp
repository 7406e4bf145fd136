#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "floodsim/common.hpp"
#include "floodsim/mobility.hpp"
#include "floodsim/policy.hpp"
#include "floodsim/world.hpp"

namespace floodsim::translate {

enum class Tag { Routing, Obstacle, Stop, Relief, NoOp };

std::string_view to_string(Tag tag);

struct Instruction {
  Tag tag = Tag::NoOp;
  int region = 0;
  std::optional<GridCoord> cell;
  std::map<std::string, std::string> params;
  int start = 0;  // inclusive steps
  int end = 0;
  std::string directive;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

// Keyword table lookup. Text with no known keyword classifies as NoOp and,
// when `warnings` is given, leaves a note there.
Tag classify_command(std::string_view text, std::vector<std::string>* warnings = nullptr);

// One instruction per directive, in order, active over [step, step + window - 1].
// Throws UnknownDirective when a directive does not open with a known verb.
std::vector<Instruction> translate(const policy::RegionalPlan& plan, int step, int window);

struct WrapResult {
  std::optional<Instruction> instruction;  // set when accepted
  std::string reason;                      // set when rejected

  bool accepted() const { return instruction.has_value(); }
};

struct WrapOptions {
  int horizon = 100;         // steps; windows end at horizon - 1 at the latest
  double block_depth = 0.3;  // a region is fully flooded when every road cell reaches it
};

// Snaps cell anchors to the nearest road cell of the region (Manhattan, ties
// row-major), clips windows to the horizon and rejects undeployable orders.
WrapResult wrap_accuracy(const Instruction& instr, const world::WorldState& world, const WrapOptions& options);

// Accepted instructions in force, queried by agents and the hydrology step.
class InstructionBoard final : public mobility::TrafficControls {
public:
  explicit InstructionBoard(int n_regions, double relief_multiplier = 3.0);

  void dispatch(const Instruction& instr, const world::WorldState& world);

  bool is_closed(int cell_index, int step) const override;
  bool avoids_region(int region, int step) const override;
  bool transit_stopped(int region, int step) const override;

  // Per-region drainage factors for the step: relief_multiplier where a
  // Relief window is open, 1 elsewhere.
  std::vector<double> drainage_multipliers(int step) const;
  std::vector<int> active_regions(int step) const;
  std::size_t size() const { return log_.size(); }
  const std::vector<Instruction>& dispatched() const { return log_; }

private:
  using Windows = std::vector<std::pair<int, int>>;
  static bool open(const Windows& w, int step);

  int n_regions_;
  double relief_multiplier_;
  std::unordered_map<int, Windows> closed_;
  std::vector<Windows> routing_, stop_, relief_;
  std::vector<Instruction> log_;
};

struct InstructionLogRow {
  int cycle = 0;
  Instruction instruction;
  bool accepted = false;
  std::string reason;
};

// CSV: cycle,region,tag,anchor,window_start,window_end,status,reason,directive
void write_instruction_log(std::ostream& out, const std::vector<InstructionLogRow>& rows);

}  // namespace floodsim::translate

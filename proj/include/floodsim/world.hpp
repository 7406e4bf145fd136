#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "floodsim/common.hpp"

namespace floodsim::world {

enum class ScenarioKind { Extreme, Intermittent, Light };

std::string_view to_string(ScenarioKind kind);
ScenarioKind parse_scenario_kind(std::string_view text);

// Normalized rainfall intensity, one value in [0, 1] per simulation step.
struct RainfallScenario {
  ScenarioKind kind = ScenarioKind::Light;
  int steps = 0;
  std::uint64_t seed = 0;
  std::vector<double> curve;

  friend bool operator==(const RainfallScenario&, const RainfallScenario&) = default;
};

// Throws InvalidHorizon when steps < 10.
RainfallScenario generate_scenario(ScenarioKind kind, int steps, std::uint64_t seed);

// Scenario file: one JSON record per line with kind, steps, seed and the curve.
void write_scenarios(std::ostream& out, std::span<const RainfallScenario> scenarios);
std::vector<RainfallScenario> read_scenarios(std::istream& in);

struct GridCell {
  double water_depth = 0.0;  // m
  double car_density = 0.0;  // vehicles per cell
  double elevation = 0.0;    // m
  bool is_road = false;
  int region_id = 0;
};

// Per-step fractions, clamped to [0, 1] on construction of a WorldState.
struct HydrologyParams {
  double inflow = 0.01;
  double drainage = 0.05;
  double diffusion = 0.2;
};

class WorldState {
public:
  // Builds a flat, roadless grid partitioned into n_regions square tiles.
  WorldState(int width, int height, int n_regions, HydrologyParams params = {});

  int width() const { return width_; }
  int height() const { return height_; }
  int n_regions() const { return n_regions_; }
  std::size_t size() const { return cells_.size(); }
  const HydrologyParams& params() const { return params_; }

  bool contains(GridCoord c) const {
    return c.row >= 0 && c.col >= 0 && c.row < height_ && c.col < width_;
  }
  int index(GridCoord c) const { return c.row * width_ + c.col; }
  GridCoord coord(int idx) const { return {idx / width_, idx % width_}; }

  GridCell& cell(GridCoord c) { return cells_[static_cast<std::size_t>(index(c))]; }
  const GridCell& cell(GridCoord c) const { return cells_[static_cast<std::size_t>(index(c))]; }
  GridCell& cell(int idx) { return cells_[static_cast<std::size_t>(idx)]; }
  const GridCell& cell(int idx) const { return cells_[static_cast<std::size_t>(idx)]; }
  std::span<const GridCell> cells() const { return cells_; }

  void set_road(GridCoord c, bool road);

  // Cell indices of a region, row-major. Road lists are kept in sync by set_road.
  const std::vector<int>& region_cells(int region) const;
  const std::vector<int>& region_road_cells(int region) const;

  double total_water() const;
  int road_cell_count() const { return road_count_; }

  int step = 0;

private:
  int width_;
  int height_;
  int n_regions_;
  HydrologyParams params_;
  std::vector<GridCell> cells_;
  std::vector<std::vector<int>> region_cells_;
  std::vector<std::vector<int>> region_roads_;
  int road_count_ = 0;
};

// Square tiling: n must be a perfect square k*k with k <= width and k <= height.
// Tile boundaries follow floor(i*k/extent), so tile sizes differ by at most one.
std::vector<int> partition_regions(int width, int height, int n);

struct WorldOptions {
  int width = 64;
  int height = 64;
  int n_regions = 64;
  int road_spacing = 4;
  double elevation_relief = 6.0;  // m, peak-to-trough of the synthetic terrain
  int terrain_scale = 8;          // cells between terrain lattice points
  double block_rise = 0.5;        // m, city blocks stand above street level
  double roughness = 0.3;         // m, per-cell street sags and crowns
  HydrologyParams hydrology{};
};

// Grid-street city on seeded smooth terrain.
WorldState make_world(const WorldOptions& options, std::uint64_t seed);

struct HydrologyLedger {
  double inflow = 0.0;
  double drained = 0.0;
  double total_before = 0.0;
  double total_after = 0.0;
};

// One step: drainage on the current depths, rainfall onto road cells, then
// downhill relaxation. drainage_multiplier, when given, scales d per region.
HydrologyLedger step_hydrology(WorldState& world, double intensity,
                               std::span<const double> drainage_multiplier = {});

struct DepthStats {
  double mean = 0.0;
  double stddev = 0.0;
};

std::vector<double> region_mean_depths(const WorldState& world);
std::vector<double> region_mean_density(const WorldState& world);

// Population mean and stddev over per-region values.
DepthStats population_stats(std::span<const double> values);
DepthStats water_depth_stats(const WorldState& world);

}  // namespace floodsim::world

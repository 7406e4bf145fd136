#include "floodsim/world.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

#include <json.hpp>

#include "floodsim/rng.hpp"

namespace floodsim::world {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

int isqrt_exact(int n) {
  int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  while (k * k > n) --k;
  while ((k + 1) * (k + 1) <= n) ++k;
  return k * k == n ? k : -1;
}

std::vector<double> extreme_curve(int steps, Rng& rng) {
  std::vector<double> curve(static_cast<std::size_t>(steps), 0.0);
  const int onset = static_cast<int>(0.12 * steps) + static_cast<int>(rng.below(
                        static_cast<std::uint64_t>(std::max(1, steps / 20)) + 1));
  const int plateau = static_cast<int>(std::ceil(0.35 * steps));
  const int ramp = 2;
  for (int k = 0; k < onset; ++k) curve[static_cast<std::size_t>(k)] = clamp01(0.05 + rng.uniform(-0.05, 0.05));
  curve[static_cast<std::size_t>(onset)] = 0.35 + rng.uniform(-0.05, 0.05);
  curve[static_cast<std::size_t>(onset + 1)] = 0.65 + rng.uniform(-0.05, 0.05);
  const int p0 = onset + ramp;
  for (int k = p0; k < p0 + plateau; ++k) curve[static_cast<std::size_t>(k)] = 0.9 + rng.uniform(-0.05, 0.05);
  curve[static_cast<std::size_t>(p0 + plateau / 2)] = 1.0;
  for (int k = p0 + plateau; k < steps; ++k) {
    const double tail = 0.6 * std::exp(-(k - p0 - plateau) / 4.0);
    curve[static_cast<std::size_t>(k)] = std::clamp(tail + rng.uniform(-0.05, 0.05), 0.0, 0.75);
  }
  return curve;
}

std::vector<double> intermittent_curve(int steps, Rng& rng) {
  std::vector<double> curve(static_cast<std::size_t>(steps), 0.0);
  const int pulses = steps >= 30 ? 3 : 2;
  const int segment = steps / pulses;
  for (int p = 0; p < pulses; ++p) {
    const int begin = p * segment;
    const int width = std::max(3, static_cast<int>(0.4 * segment));
    const int start = begin + std::max(1, (segment - width) / 2);
    const int center = start + width / 2;
    const double half = width / 2.0 + 1.0;
    for (int k = start; k < start + width && k < steps; ++k) {
      const double shape = 1.0 - std::abs(k - center) / half;
      curve[static_cast<std::size_t>(k)] = clamp01(shape + rng.uniform(-0.05, 0.05));
    }
    curve[static_cast<std::size_t>(center)] = p == 0 ? 1.0 : 0.9 + rng.uniform(0.0, 0.1);
  }
  return curve;
}

std::vector<double> light_curve(int steps, Rng& rng) {
  std::vector<double> curve(static_cast<std::size_t>(steps), 0.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int k = 0; k < steps; ++k) {
    const double wave = 0.05 * std::sin(phase + 3.0 * std::numbers::pi * k / steps);
    curve[static_cast<std::size_t>(k)] = std::clamp(0.2 + wave + rng.uniform(-0.05, 0.05), 0.02, 0.35);
  }
  const int gap = steps / 20;
  const int gap_start = steps / 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(steps / 4 + 1)));
  for (int k = gap_start; k < std::min(steps, gap_start + gap); ++k) curve[static_cast<std::size_t>(k)] = 0.0;
  return curve;
}

}  // namespace

std::string_view to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::Extreme: return "Extreme";
    case ScenarioKind::Intermittent: return "Intermittent";
    case ScenarioKind::Light: return "Light";
  }
  return "Light";
}

ScenarioKind parse_scenario_kind(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "extreme") return ScenarioKind::Extreme;
  if (lower == "intermittent") return ScenarioKind::Intermittent;
  if (lower == "light") return ScenarioKind::Light;
  throw Error(ErrorKind::ConfigError, "unknown scenario kind '" + std::string(text) + "'", "scenario");
}

RainfallScenario generate_scenario(ScenarioKind kind, int steps, std::uint64_t seed) {
  if (steps < 10) throw Error(ErrorKind::InvalidHorizon, "scenario needs at least 10 steps");
  Rng rng(substream_seed(seed, to_string(kind)));
  RainfallScenario s{kind, steps, seed, {}};
  switch (kind) {
    case ScenarioKind::Extreme: s.curve = extreme_curve(steps, rng); break;
    case ScenarioKind::Intermittent: s.curve = intermittent_curve(steps, rng); break;
    case ScenarioKind::Light: s.curve = light_curve(steps, rng); break;
  }
  return s;
}

void write_scenarios(std::ostream& out, std::span<const RainfallScenario> scenarios) {
  for (const auto& s : scenarios) {
    nlohmann::json j{{"kind", to_string(s.kind)}, {"steps", s.steps}, {"seed", s.seed}, {"curve", s.curve}};
    out << j.dump() << '\n';
  }
}

std::vector<RainfallScenario> read_scenarios(std::istream& in) {
  std::vector<RainfallScenario> result;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "scenario[" + std::to_string(line_no) + "]";
    try {
      const auto j = nlohmann::json::parse(line);
      RainfallScenario s;
      s.kind = parse_scenario_kind(j.at("kind").get<std::string>());
      s.steps = j.at("steps").get<int>();
      s.seed = j.at("seed").get<std::uint64_t>();
      s.curve = j.at("curve").get<std::vector<double>>();
      if (static_cast<int>(s.curve.size()) != s.steps)
        throw Error(ErrorKind::ConfigError, "curve length differs from steps", where + ".curve");
      for (double v : s.curve)
        if (!(v >= 0.0 && v <= 1.0))
          throw Error(ErrorKind::ConfigError, "curve value outside [0,1]", where + ".curve");
      result.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ConfigError, e.what(), where);
    }
  }
  return result;
}

WorldState::WorldState(int width, int height, int n_regions, HydrologyParams params)
    : width_(width),
      height_(height),
      n_regions_(n_regions),
      params_{clamp01(params.inflow), clamp01(params.drainage), clamp01(params.diffusion)} {
  const auto map = partition_regions(width, height, n_regions);
  cells_.resize(map.size());
  region_cells_.assign(static_cast<std::size_t>(n_regions), {});
  region_roads_.assign(static_cast<std::size_t>(n_regions), {});
  for (std::size_t i = 0; i < map.size(); ++i) {
    cells_[i].region_id = map[i];
    region_cells_[static_cast<std::size_t>(map[i])].push_back(static_cast<int>(i));
  }
}

void WorldState::set_road(GridCoord c, bool road) {
  auto& cl = cell(c);
  if (cl.is_road == road) return;
  cl.is_road = road;
  auto& roads = region_roads_[static_cast<std::size_t>(cl.region_id)];
  const int idx = index(c);
  if (road) {
    roads.insert(std::lower_bound(roads.begin(), roads.end(), idx), idx);
    ++road_count_;
  } else {
    roads.erase(std::lower_bound(roads.begin(), roads.end(), idx));
    --road_count_;
  }
}

const std::vector<int>& WorldState::region_cells(int region) const {
  if (region < 0 || region >= n_regions_) throw Error(ErrorKind::UnknownRegion, std::to_string(region));
  return region_cells_[static_cast<std::size_t>(region)];
}

const std::vector<int>& WorldState::region_road_cells(int region) const {
  if (region < 0 || region >= n_regions_) throw Error(ErrorKind::UnknownRegion, std::to_string(region));
  return region_roads_[static_cast<std::size_t>(region)];
}

double WorldState::total_water() const {
  double sum = 0.0;
  for (const auto& c : cells_) sum += c.water_depth;
  return sum;
}

std::vector<int> partition_regions(int width, int height, int n) {
  if (n < 1) throw Error(ErrorKind::InvalidPartition, "region count must be >= 1");
  const int k = isqrt_exact(n);
  if (k < 0) throw Error(ErrorKind::InvalidPartition, "region count must be a perfect square");
  if (width < k || height < k) throw Error(ErrorKind::InvalidPartition, "grid smaller than tiling");
  std::vector<int> map(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  for (int r = 0; r < height; ++r) {
    const int tr = r * k / height;
    for (int c = 0; c < width; ++c) {
      const int tc = c * k / width;
      map[static_cast<std::size_t>(r * width + c)] = tr * k + tc;
    }
  }
  return map;
}

WorldState make_world(const WorldOptions& options, std::uint64_t seed) {
  WorldState world(options.width, options.height, options.n_regions, options.hydrology);
  Rng rng(substream_seed(seed, "terrain"));

  // Value noise on a coarse lattice, bilinearly interpolated, plus a gentle tilt.
  const int scale = std::max(1, options.terrain_scale);
  const int lw = options.width / scale + 2;
  const int lh = options.height / scale + 2;
  std::vector<double> lattice(static_cast<std::size_t>(lw * lh));
  for (auto& v : lattice) v = rng.uniform();
  const double tilt_r = rng.uniform(-0.3, 0.3);
  const double tilt_c = rng.uniform(-0.3, 0.3);
  for (int r = 0; r < options.height; ++r) {
    for (int c = 0; c < options.width; ++c) {
      const double fr = static_cast<double>(r) / scale;
      const double fc = static_cast<double>(c) / scale;
      const int r0 = static_cast<int>(fr);
      const int c0 = static_cast<int>(fc);
      const double ar = fr - r0;
      const double ac = fc - c0;
      auto at = [&](int rr, int cc) { return lattice[static_cast<std::size_t>(rr * lw + cc)]; };
      const double v = (1 - ar) * ((1 - ac) * at(r0, c0) + ac * at(r0, c0 + 1)) +
                       ar * ((1 - ac) * at(r0 + 1, c0) + ac * at(r0 + 1, c0 + 1));
      const double tilt = tilt_r * r / options.height + tilt_c * c / options.width;
      world.cell(GridCoord{r, c}).elevation = options.elevation_relief * (v + tilt) + options.roughness * rng.uniform();
    }
  }

  const int spacing = std::max(1, options.road_spacing);
  for (int r = 0; r < options.height; ++r)
    for (int c = 0; c < options.width; ++c)
      if (r % spacing == 0 || c % spacing == 0)
        world.set_road(GridCoord{r, c}, true);
      else
        world.cell(GridCoord{r, c}).elevation += options.block_rise;
  return world;
}

HydrologyLedger step_hydrology(WorldState& world, double intensity,
                               std::span<const double> drainage_multiplier) {
  const auto& p = world.params();
  intensity = clamp01(intensity);
  HydrologyLedger ledger;
  ledger.total_before = world.total_water();

  const std::size_t n = world.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto& cell = world.cell(static_cast<int>(i));
    double rate = p.drainage;
    if (!drainage_multiplier.empty())
      rate = clamp01(rate * drainage_multiplier[static_cast<std::size_t>(cell.region_id)]);
    const double out = rate * cell.water_depth;
    cell.water_depth -= out;
    ledger.drained += out;
    if (cell.is_road) {
      const double in = intensity * p.inflow;
      cell.water_depth += in;
      ledger.inflow += in;
    }
  }

  if (p.diffusion > 0.0) {
    std::vector<double> delta(n, 0.0);
    const int w = world.width();
    const int h = world.height();
    int downhill[4];
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const int i = r * w + c;
        const auto& cell = world.cell(i);
        if (cell.water_depth <= 0.0) continue;
        int m = 0;
        if (r > 0 && world.cell(i - w).elevation < cell.elevation) downhill[m++] = i - w;
        if (c > 0 && world.cell(i - 1).elevation < cell.elevation) downhill[m++] = i - 1;
        if (c + 1 < w && world.cell(i + 1).elevation < cell.elevation) downhill[m++] = i + 1;
        if (r + 1 < h && world.cell(i + w).elevation < cell.elevation) downhill[m++] = i + w;
        if (m == 0) continue;
        // Excess is measured on the water surface, so ponds fill low ground
        // until they level with their rim.
        double mean = 0.0;
        for (int k = 0; k < m; ++k) mean += world.cell(downhill[k]).water_depth + world.cell(downhill[k]).elevation;
        mean /= m;
        const double excess = std::min(cell.water_depth, cell.water_depth + cell.elevation - mean);
        if (excess <= 0.0) continue;
        const double moved = p.diffusion * excess;
        const double share = moved / m;
        delta[static_cast<std::size_t>(i)] -= share * m;
        for (int k = 0; k < m; ++k) delta[static_cast<std::size_t>(downhill[k])] += share;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto& d = world.cell(static_cast<int>(i)).water_depth;
      d = std::max(0.0, d + delta[i]);
    }
  }

  ledger.total_after = world.total_water();
  return ledger;
}

std::vector<double> region_mean_depths(const WorldState& world) {
  std::vector<double> out(static_cast<std::size_t>(world.n_regions()), 0.0);
  for (int r = 0; r < world.n_regions(); ++r) {
    const auto& cells = world.region_cells(r);
    double sum = 0.0;
    for (int i : cells) sum += world.cell(i).water_depth;
    out[static_cast<std::size_t>(r)] = cells.empty() ? 0.0 : sum / static_cast<double>(cells.size());
  }
  return out;
}

std::vector<double> region_mean_density(const WorldState& world) {
  std::vector<double> out(static_cast<std::size_t>(world.n_regions()), 0.0);
  for (int r = 0; r < world.n_regions(); ++r) {
    const auto& cells = world.region_cells(r);
    double sum = 0.0;
    for (int i : cells) sum += world.cell(i).car_density;
    out[static_cast<std::size_t>(r)] = cells.empty() ? 0.0 : sum / static_cast<double>(cells.size());
  }
  return out;
}

DepthStats population_stats(std::span<const double> values) {
  if (values.empty()) return {};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

DepthStats water_depth_stats(const WorldState& world) {
  const auto depths = region_mean_depths(world);
  return population_stats(depths);
}

}  // namespace floodsim::world

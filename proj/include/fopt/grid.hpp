#pragma once

// Deterministic multi-agent grid environments: empty N-agent grids,
// forced-cooperation foraging and mixed-type (row-only / full) teams.
//
// Coordinates follow the (row, col) convention of level-based foraging:
// feature 0 is x = row, moved by Up/Down; feature 1 is y = column, moved by
// Left/Right.

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fopt/common.hpp"

namespace fopt::grid {

struct Cell {
  int x = 0;
  int y = 0;
  auto operator<=>(const Cell&) const = default;
};

enum class Action : std::uint8_t { kNoop = 0, kUp, kDown, kLeft, kRight, kLoad };
inline constexpr int kNumActions = 6;

/// Throws ActionError for ids outside the primitive action range.
Action action_from_int(int id);
const char* action_name(Action a);

/// Type 1 agents only carry (and can only change) the row feature; Type 2
/// agents carry both coordinates.
enum class AgentType : std::uint8_t { kRowOnly = 1, kFull = 2 };

/// Size of the unified single-agent feature space (x, y).
inline constexpr int kNumFeatures = 2;

bool has_feature(AgentType t, int feature);
bool is_legal(AgentType t, Action a);
std::vector<Action> legal_actions(AgentType t);

struct Apple {
  Cell cell;
  int level = 1;
};

struct GridSpec {
  int width = 7;   // columns (y extent)
  int height = 7;  // rows (x extent)
  int n_agents = 3;
  std::vector<AgentType> agent_types;  // empty: all kFull
  std::vector<int> agent_levels;       // empty: all 1
  std::vector<Apple> apples;
  bool forced_coop = false;
  std::vector<Cell> walls;
  int horizon = 50;
  std::uint64_t seed = 0;

  AgentType type_of(int agent) const;
  int level_of(int agent) const;
  bool in_bounds(Cell c) const { return c.x >= 0 && c.x < height && c.y >= 0 && c.y < width; }
  bool is_wall(Cell c) const;
  bool heterogeneous() const;
  /// Extent of feature f in grid units (number of distinct values).
  int feature_extent(int f) const { return f == 0 ? height : width; }

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

/// Sets every apple's level to the team's summed level and enables
/// forced cooperation.
void make_forced_coop(GridSpec& spec);

nlohmann::json to_json(const GridSpec& spec);
GridSpec spec_from_json(const nlohmann::json& j);

struct JointState {
  std::vector<Cell> cells;
  std::uint32_t apples = 0;  // bit k set: apple k still on the grid
  int step = 0;
  bool operator==(const JointState&) const = default;
};

/// Per-agent observation. Teammate information is always shared in full.
struct Observation {
  std::array<double, kNumFeatures> own{};
  std::vector<std::array<double, kNumFeatures>> teammate_offsets;
  std::vector<bool> teammate_near_apple;
  std::vector<AgentType> types;
  std::uint32_t apples = 0;
};

/// Joint state split into per-agent vectors over the unified feature space;
/// features an agent does not own are padded with 0.
struct FactoredState {
  int n_agents = 0;
  std::vector<double> values;  // row-major, n_agents x kNumFeatures

  std::span<const double> agent(int i) const {
    return {values.data() + static_cast<std::size_t>(i) * kNumFeatures, kNumFeatures};
  }
  bool operator==(const FactoredState&) const = default;
};

struct StepResult {
  JointState state;
  double reward = 0.0;
  std::vector<Observation> obs;
  bool done = false;
  int apples_eaten = 0;
};

JointState reset(const GridSpec& spec, std::uint64_t seed);
/// Observations are skipped when `with_obs` is false (hot training loops).
StepResult step(const GridSpec& spec, const JointState& state, std::span<const Action> actions,
                bool with_obs = true);
std::vector<Observation> observe(const GridSpec& spec, const JointState& state);
FactoredState factorize(const JointState& state, const GridSpec& spec);

/// Single-agent state of `agent` in the unified feature space.
std::array<double, kNumFeatures> single_agent_features(const GridSpec& spec, int agent, Cell c);

/// Cells an agent may occupy: in bounds, not a wall, not an (initial) apple.
std::vector<Cell> free_cells(const GridSpec& spec);
bool is_free(const GridSpec& spec, Cell c, std::uint32_t apples);

/// Destination of a move from `c` ignoring other agents (walls, bounds and
/// remaining apples block).
Cell move_target(const GridSpec& spec, Cell c, Action a, std::uint32_t apples);

bool near_apple(const GridSpec& spec, Cell c, std::uint32_t apples);
std::uint32_t all_apples_mask(const GridSpec& spec);
int count_bits(std::uint32_t mask);

}  // namespace fopt::grid

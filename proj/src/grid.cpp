#include "fopt/grid.hpp"

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <map>
#include <numeric>

namespace fopt::grid {

Action action_from_int(int id) {
  if (id < 0 || id >= kNumActions) {
    throw ActionError("action id " + std::to_string(id) + " out of range");
  }
  return static_cast<Action>(id);
}

const char* action_name(Action a) {
  switch (a) {
    case Action::kNoop: return "noop";
    case Action::kUp: return "up";
    case Action::kDown: return "down";
    case Action::kLeft: return "left";
    case Action::kRight: return "right";
    case Action::kLoad: return "load";
  }
  return "?";
}

bool has_feature(AgentType t, int feature) {
  return t == AgentType::kFull || feature == 0;
}

bool is_legal(AgentType t, Action a) {
  if (t == AgentType::kRowOnly) return a != Action::kLeft && a != Action::kRight;
  return true;
}

std::vector<Action> legal_actions(AgentType t) {
  std::vector<Action> out;
  for (int a = 0; a < kNumActions; ++a) {
    if (is_legal(t, static_cast<Action>(a))) out.push_back(static_cast<Action>(a));
  }
  return out;
}

AgentType GridSpec::type_of(int agent) const {
  return agent_types.empty() ? AgentType::kFull : agent_types.at(agent);
}

int GridSpec::level_of(int agent) const {
  return agent_levels.empty() ? 1 : agent_levels.at(agent);
}

bool GridSpec::is_wall(Cell c) const {
  return std::find(walls.begin(), walls.end(), c) != walls.end();
}

bool GridSpec::heterogeneous() const {
  for (int i = 0; i < n_agents; ++i) {
    if (type_of(i) != type_of(0)) return true;
  }
  return false;
}

void GridSpec::validate() const {
  if (width < 2 || height < 2) throw ConfigError("grid must be at least 2x2");
  if (n_agents < 2) throw ConfigError("need at least two agents");
  if (!agent_types.empty() && static_cast<int>(agent_types.size()) != n_agents) {
    throw ConfigError("agent_types length does not match n_agents");
  }
  if (!agent_levels.empty() && static_cast<int>(agent_levels.size()) != n_agents) {
    throw ConfigError("agent_levels length does not match n_agents");
  }
  if (horizon < 1) throw ConfigError("horizon must be positive");
  if (apples.size() > 32) throw ConfigError("at most 32 apples supported");
  for (const Cell& w : walls) {
    if (!in_bounds(w)) throw ConfigError("wall out of bounds");
  }
  for (std::size_t i = 0; i < apples.size(); ++i) {
    const Apple& a = apples[i];
    if (!in_bounds(a.cell) || is_wall(a.cell)) throw ConfigError("apple on wall or out of bounds");
    for (std::size_t j = 0; j < i; ++j) {
      if (apples[j].cell == a.cell) throw ConfigError("two apples share a cell");
    }
    if (a.level < 1) throw ConfigError("apple level must be positive");
  }
  if (forced_coop) {
    int total = 0;
    for (int i = 0; i < n_agents; ++i) total += level_of(i);
    for (const Apple& a : apples) {
      if (a.level != total) throw ConfigError("forced_coop requires apple level = sum of agent levels");
    }
  }
  if (static_cast<int>(free_cells(*this).size()) < n_agents) {
    throw ConfigError("too few free cells for " + std::to_string(n_agents) + " agents");
  }
}

void make_forced_coop(GridSpec& spec) {
  int total = 0;
  for (int i = 0; i < spec.n_agents; ++i) total += spec.level_of(i);
  for (Apple& a : spec.apples) a.level = total;
  spec.forced_coop = true;
}

nlohmann::json to_json(const GridSpec& spec) {
  nlohmann::json j;
  j["width"] = spec.width;
  j["height"] = spec.height;
  j["n_agents"] = spec.n_agents;
  std::vector<int> types;
  for (AgentType t : spec.agent_types) types.push_back(static_cast<int>(t));
  j["agent_types"] = types;
  j["agent_levels"] = spec.agent_levels;
  nlohmann::json apples = nlohmann::json::array();
  for (const Apple& a : spec.apples) apples.push_back({a.cell.x, a.cell.y, a.level});
  j["apples"] = apples;
  j["forced_coop"] = spec.forced_coop;
  nlohmann::json walls = nlohmann::json::array();
  for (const Cell& c : spec.walls) walls.push_back({c.x, c.y});
  j["walls"] = walls;
  j["horizon"] = spec.horizon;
  j["seed"] = spec.seed;
  return j;
}

GridSpec spec_from_json(const nlohmann::json& j) {
  GridSpec s;
  s.width = j.at("width");
  s.height = j.at("height");
  s.n_agents = j.at("n_agents");
  for (int t : j.at("agent_types")) s.agent_types.push_back(static_cast<AgentType>(t));
  s.agent_levels = j.at("agent_levels").get<std::vector<int>>();
  for (const auto& a : j.at("apples")) s.apples.push_back({{a[0], a[1]}, a[2]});
  s.forced_coop = j.at("forced_coop");
  for (const auto& w : j.at("walls")) s.walls.push_back({w[0], w[1]});
  s.horizon = j.at("horizon");
  s.seed = j.at("seed");
  return s;
}

std::uint32_t all_apples_mask(const GridSpec& spec) {
  const auto n = spec.apples.size();
  return n == 32 ? 0xffffffffu : ((1u << n) - 1u);
}

int count_bits(std::uint32_t mask) { return std::popcount(mask); }

std::vector<Cell> free_cells(const GridSpec& spec) {
  std::vector<Cell> out;
  for (int x = 0; x < spec.height; ++x) {
    for (int y = 0; y < spec.width; ++y) {
      const Cell c{x, y};
      if (is_free(spec, c, all_apples_mask(spec))) out.push_back(c);
    }
  }
  return out;
}

bool is_free(const GridSpec& spec, Cell c, std::uint32_t apples) {
  if (!spec.in_bounds(c) || spec.is_wall(c)) return false;
  for (std::size_t k = 0; k < spec.apples.size(); ++k) {
    if ((apples >> k & 1u) && spec.apples[k].cell == c) return false;
  }
  return true;
}

Cell move_target(const GridSpec& spec, Cell c, Action a, std::uint32_t apples) {
  Cell t = c;
  switch (a) {
    case Action::kUp: t.x -= 1; break;
    case Action::kDown: t.x += 1; break;
    case Action::kLeft: t.y -= 1; break;
    case Action::kRight: t.y += 1; break;
    default: return c;
  }
  return is_free(spec, t, apples) ? t : c;
}

bool near_apple(const GridSpec& spec, Cell c, std::uint32_t apples) {
  for (std::size_t k = 0; k < spec.apples.size(); ++k) {
    if (!(apples >> k & 1u)) continue;
    const Cell a = spec.apples[k].cell;
    if (std::abs(a.x - c.x) <= 1 && std::abs(a.y - c.y) <= 1) return true;
  }
  return false;
}

JointState reset(const GridSpec& spec, std::uint64_t seed) {
  std::vector<Cell> cells = free_cells(spec);
  if (static_cast<int>(cells.size()) < spec.n_agents) {
    throw ConfigError("too few free cells for " + std::to_string(spec.n_agents) + " agents");
  }
  Rng rng(derive_seed(seed, "reset"));
  // Partial Fisher-Yates: the first n_agents entries become the spawn cells.
  for (int i = 0; i < spec.n_agents; ++i) {
    const auto j = i + uniform_index(rng, cells.size() - i);
    std::swap(cells[i], cells[j]);
  }
  JointState s;
  s.cells.assign(cells.begin(), cells.begin() + spec.n_agents);
  s.apples = all_apples_mask(spec);
  s.step = 0;
  return s;
}

std::array<double, kNumFeatures> single_agent_features(const GridSpec& spec, int agent, Cell c) {
  std::array<double, kNumFeatures> f{};
  const AgentType t = spec.type_of(agent);
  f[0] = has_feature(t, 0) ? c.x : 0.0;
  f[1] = has_feature(t, 1) ? c.y : 0.0;
  return f;
}

FactoredState factorize(const JointState& state, const GridSpec& spec) {
  FactoredState fs;
  fs.n_agents = static_cast<int>(state.cells.size());
  fs.values.reserve(static_cast<std::size_t>(fs.n_agents) * kNumFeatures);
  for (int i = 0; i < fs.n_agents; ++i) {
    const auto f = single_agent_features(spec, i, state.cells[i]);
    fs.values.insert(fs.values.end(), f.begin(), f.end());
  }
  return fs;
}

std::vector<Observation> observe(const GridSpec& spec, const JointState& state) {
  const int n = static_cast<int>(state.cells.size());
  std::vector<Observation> out(n);
  for (int i = 0; i < n; ++i) {
    Observation& o = out[i];
    o.own = single_agent_features(spec, i, state.cells[i]);
    o.apples = state.apples;
    for (int j = 0; j < n; ++j) {
      o.types.push_back(spec.type_of(j));
      if (j == i) continue;
      const auto other = single_agent_features(spec, j, state.cells[j]);
      o.teammate_offsets.push_back({other[0] - o.own[0], other[1] - o.own[1]});
      o.teammate_near_apple.push_back(near_apple(spec, state.cells[j], state.apples));
    }
  }
  return out;
}

namespace {

// Simultaneous moves. An agent keeps its cell when the move is blocked by the
// grid, when a lower-index agent claims the same target, when the target is
// held by an agent that ends up staying, or when two agents would swap.
std::vector<Cell> resolve_moves(const GridSpec& spec, const JointState& s,
                                std::span<const Action> actions) {
  const int n = static_cast<int>(s.cells.size());
  std::vector<Cell> target(n);
  for (int i = 0; i < n; ++i) target[i] = move_target(spec, s.cells[i], actions[i], s.apples);

  bool changed = true;
  while (changed) {
    changed = false;
    for (int i = 0; i < n; ++i) {
      if (target[i] == s.cells[i]) continue;
      bool blocked = false;
      for (int j = 0; j < n && !blocked; ++j) {
        if (j == i) continue;
        // Same target: the staying agent or the lower index wins.
        if (target[j] == target[i] && (target[j] == s.cells[j] || j < i)) blocked = true;
        // Swap through each other.
        if (target[j] == s.cells[i] && target[i] == s.cells[j]) blocked = true;
      }
      if (blocked) {
        target[i] = s.cells[i];
        changed = true;
      }
    }
  }
  return target;
}

}  // namespace

StepResult step(const GridSpec& spec, const JointState& state, std::span<const Action> actions,
                bool with_obs) {
  const int n = static_cast<int>(state.cells.size());
  if (static_cast<int>(actions.size()) != n) {
    throw ActionError("expected " + std::to_string(n) + " actions, got " + std::to_string(actions.size()));
  }
  for (int i = 0; i < n; ++i) {
    const int id = static_cast<int>(actions[i]);
    if (id < 0 || id >= kNumActions) throw ActionError("action id " + std::to_string(id) + " out of range");
    if (!is_legal(spec.type_of(i), actions[i])) {
      throw ActionError(std::string("action '") + action_name(actions[i]) + "' illegal for agent " +
                        std::to_string(i));
    }
  }

  StepResult r;
  r.state = state;

  // Loading uses positions at the start of the step.
  std::uint32_t eaten = 0;
  for (std::size_t k = 0; k < spec.apples.size(); ++k) {
    if (!(state.apples >> k & 1u)) continue;
    const Cell a = spec.apples[k].cell;
    int level = 0;
    for (int i = 0; i < n; ++i) {
      const Cell c = state.cells[i];
      if (actions[i] == Action::kLoad && std::abs(a.x - c.x) <= 1 && std::abs(a.y - c.y) <= 1) {
        level += spec.level_of(i);
      }
    }
    if (level >= spec.apples[k].level) eaten |= 1u << k;
  }

  r.state.cells = resolve_moves(spec, state, actions);
  r.state.apples = state.apples & ~eaten;
  r.state.step = state.step + 1;
  r.apples_eaten = count_bits(eaten);
  if (!spec.apples.empty()) {
    r.reward = static_cast<double>(r.apples_eaten) / static_cast<double>(spec.apples.size());
  }
  r.done = r.state.step >= spec.horizon || (!spec.apples.empty() && r.state.apples == 0);
  if (with_obs) r.obs = observe(spec, r.state);
  return r;
}

}  // namespace fopt::grid

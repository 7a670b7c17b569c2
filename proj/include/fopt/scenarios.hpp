#pragma once

// Mixed-type team scenarios (row-only Type 1 with full Type 2 agents) and
// the rollout measurements used to read their options' behaviour.

#include "fopt/config.hpp"

namespace fopt::scenarios {

/// 10x10, one Type 1 and one Type 2 agent.
config::PipelineConfig scenario_10x10_2ag();
/// 15x15, one Type 1 and two Type 2 agents.
config::PipelineConfig scenario_15x15_3ag();

/// Final-state statistics of greedy rollouts of one option.
struct RolloutStats {
  int option_id = 0;
  int k = 0;
  int sign = 1;
  int rollouts = 0;
  /// Per rollout, mean over agents of |s^i_f - phi_f(s)| at the final state.
  std::vector<std::array<double, grid::kNumFeatures>> offsets;
  /// Per rollout, final x of agent b minus x of agent a (see measure_option).
  std::vector<int> dx;
  /// Per rollout, |y_b - y_c| between the two given Type-2 agents (or 0).
  std::vector<int> dy_pair;
  /// Max over rollouts of the final x range over all agents.
  std::vector<int> x_range;
  bool padded_moved = false;  // a Type-1 agent's column changed

  double mean_offset(int f) const;
  double mean_abs_dx() const;
  double mean_dy_pair() const;
  double mean_x_range() const;
};

/// `dx_agents` = {a, b}; `pair` = two Type-2 agents for dy_pair (or {-1,-1}).
RolloutStats measure_option(const options::JointOption& o, const options::OptionKeyer& keyer,
                            const grid::GridSpec& spec, const fermat::RelativeAbstraction& abs, int rollouts,
                            std::uint64_t seed, std::array<int, 2> dx_agents, std::array<int, 2> pair);

/// Largest change of the summed calibrated distance from a Type-1 source
/// when only the goal's padded (y) value varies, over all row pairs.
double padding_sensitivity(const metric::LearnedDistance& d, const grid::GridSpec& spec);

/// Two-agent eigenvector profiles along x: displacing the Type-1 agent from
/// the Type-2 agent, and displacing the Type-2 agent from the Type-1 agent,
/// at the same column. Returns max |a - s b| after sign alignment.
double perspective_gap(const spectral::SpectralBasis& b, int k, const fermat::Abstraction& abs,
                       const grid::GridSpec& spec);

}  // namespace fopt::scenarios

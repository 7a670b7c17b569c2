#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fopt/grid.hpp"

namespace fopt::data {

struct Transition {
  std::uint32_t episode = 0;
  grid::JointState state;
  std::vector<grid::Action> actions;
  grid::JointState next;
  double reward = 0.0;
  bool done = false;
};

/// Random-policy joint trajectories. Transitions of one episode are stored
/// contiguously and in time order; observations are a deterministic function
/// of the state and are recomputed with grid::observe on demand.
struct TransitionDataset {
  grid::GridSpec spec;
  std::uint64_t seed = 0;
  std::string policy_tag = "uniform-random";
  std::string config_hash;
  std::vector<Transition> transitions;

  std::size_t size() const { return transitions.size(); }
  /// [begin, end) transition index ranges, one per episode.
  std::vector<std::pair<std::size_t, std::size_t>> episodes() const;
};

/// Uniform over each agent's legal primitive actions.
struct RandomJointPolicy {
  std::vector<grid::Action> sample(const grid::GridSpec& spec, Rng& rng) const;
};

TransitionDataset collect_dataset(const grid::GridSpec& spec, const RandomJointPolicy& policy,
                                  std::size_t n_transitions, std::uint64_t seed);

/// Binary layout (little endian):
///   "FOPT" | u16 version | u32 header length | header JSON | u64 count | records
/// Each record is fixed width for a given agent count N:
///   u32 episode | state | N x u8 action | state | f64 reward | u8 done
/// where state = u32 apples mask | u32 step | N x (i16 x, i16 y).
inline constexpr std::uint16_t kDatasetVersion = 1;
std::size_t record_size(int n_agents);

void save_dataset(const TransitionDataset& ds, const std::filesystem::path& path);
TransitionDataset load_dataset(const std::filesystem::path& path);

/// FNV-1a over the serialized bytes; equal datasets hash equal.
std::uint64_t dataset_hash(const TransitionDataset& ds);

}  // namespace fopt::data

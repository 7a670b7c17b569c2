#pragma once

// Joint eigenoptions: per-agent tabular Q-learning on the intrinsic reward
// sign * (e_k[rep(s')] - e_k[rep(s)]), with a termination action that ends
// the option only when every participating agent selects it.

#include <array>
#include <unordered_map>

#include "fopt/spectral.hpp"

namespace fopt::options {

/// Option-policy action ids: the primitives followed by termination.
inline constexpr int kTerminate = grid::kNumActions;
inline constexpr int kNumOptionActions = grid::kNumActions + 1;

using QRow = std::array<double, kNumOptionActions>;

/// Sparse tabular Q; missing rows read as zeros.
class QTable {
 public:
  const QRow& row(std::uint64_t key) const;
  QRow& mutable_row(std::uint64_t key) { return rows_[key]; }
  std::size_t size() const { return rows_.size(); }
  const std::unordered_map<std::uint64_t, QRow>& rows() const { return rows_; }
  bool operator==(const QTable& o) const { return rows_ == o.rows_; }

 private:
  std::unordered_map<std::uint64_t, QRow> rows_;
};

/// Greedy legal option-action: termination on ties with the best primitive,
/// otherwise the lowest index.
int greedy(const QRow& q, grid::AgentType type);
double max_legal(const QRow& q, grid::AgentType type);
std::vector<int> legal_option_actions(grid::AgentType type);

enum class KeyMode { kRelative, kJoint };
const char* key_mode_name(KeyMode m);
KeyMode key_mode_from_name(const std::string& s);

/// Per-agent state keys for option policies. `kJoint` hashes the full joint
/// state (cells and apples). `kRelative` hashes the quantized relative
/// representation, the agent's rounded offset from the Fermat state (clipped
/// to +-clip) and the apple mask.
class OptionKeyer {
 public:
  OptionKeyer(grid::GridSpec spec, KeyMode mode, const fermat::RelativeAbstraction* abs, int clip = 7);
  std::vector<std::uint64_t> keys(const grid::JointState& s) const;
  KeyMode mode() const { return mode_; }

 private:
  grid::GridSpec spec_;
  KeyMode mode_;
  const fermat::RelativeAbstraction* abs_;
  int clip_;
};

struct IntrinsicRewardSpec {
  const spectral::SpectralBasis* basis = nullptr;
  const fermat::Abstraction* abs = nullptr;
  int k = 1;
  int sign = 1;

  double value(const grid::JointState& s) const;
  double operator()(const grid::JointState& s, const grid::JointState& next) const;
};

struct JointOption {
  int id = 0;
  int eigen_index = 1;
  int sign = 1;
  int n_w = 0;  // consensus threshold; all agents
  int step_cap = 50;
  KeyMode mode = KeyMode::kRelative;
  std::vector<QTable> q;  // one per agent
  std::string config_hash;

  nlohmann::json to_json() const;
  static JointOption from_json(const nlohmann::json& j);
};

struct OptionConfig {
  long steps = 200000;  // environment steps per option
  double alpha = 0.1;
  double gamma = 0.99;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_decay_fraction = 0.1;
  int step_cap = 50;
  KeyMode mode = KeyMode::kRelative;
  int offset_clip = 7;
  std::uint64_t seed = 0;
};

double epsilon_at(long step, long total, double start, double end, double decay_fraction);

/// Option id for eigen index k >= 1 and sign: 2(k-1) for +, 2(k-1)+1 for -.
int option_id(int k, int sign);

/// Episodes start from random resets and end on unanimous termination, the
/// step cap or the environment horizon. Environment reward is ignored.
/// Throws NumericsError if any |Q| exceeds 1e6.
JointOption train_option(const grid::GridSpec& spec, const IntrinsicRewardSpec& reward, const OptionKeyer& keyer,
                         const OptionConfig& cfg, int id);

enum class Termination { kUnanimous, kStepCap, kEnvDone };
const char* termination_name(Termination t);

struct Rollout {
  std::vector<grid::JointState> states;  // states[0] is the start
  std::vector<std::vector<grid::Action>> actions;
  std::vector<double> rewards;  // intrinsic, when a reward spec is given
  Termination reason = Termination::kStepCap;
};

/// Option-action choice of every agent at `s`; with `rng` set, each agent is
/// epsilon-greedy with `eps`.
std::vector<int> option_actions(const JointOption& o, const OptionKeyer& keyer, const grid::GridSpec& spec,
                                const grid::JointState& s, Rng* rng = nullptr, double eps = 0.0);

/// Termination picks act as No-Op unless unanimous.
std::vector<grid::Action> to_primitives(const std::vector<int>& option_actions);

Rollout rollout_option(const JointOption& o, const OptionKeyer& keyer, const grid::GridSpec& spec,
                       const grid::JointState& start, const IntrinsicRewardSpec* reward = nullptr);

/// Per-feature spread sum_i |s^i_f - median_f| at a joint state (exact
/// Manhattan Fermat distance split by feature; Type-1 agents skip y).
std::array<double, grid::kNumFeatures> feature_spread(const grid::GridSpec& spec, const grid::JointState& s);

/// Mean over agents of the exact per-feature distance |s^i_f - fermat_f| to a
/// (continuous) Fermat estimate; agents without feature f are skipped.
std::array<double, grid::kNumFeatures> fermat_offsets(const grid::GridSpec& spec, const grid::JointState& s,
                                                      const metric::Features& fermat);

}  // namespace fopt::options

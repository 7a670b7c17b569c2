#pragma once

// Joint-option MacDec-POMDP layer. Every agent picks a macro-action: one of
// its legal primitives (an n_W = 1 option that terminates immediately) or a
// joint option (n_W = N). A joint option starts only on a unanimous vote.
//
// Macro-action ids: [0, kNumActions) are primitives, kNumActions + j is
// joint option j.

#include <functional>

#include "fopt/options.hpp"
#include "fopt/stats.hpp"

namespace fopt::macdec {

inline constexpr int kFirstOption = grid::kNumActions;

inline bool is_option(int macro) { return macro >= kFirstOption; }

/// Legal macro ids for one agent: its legal primitives, then every option.
std::vector<int> legal_macros(grid::AgentType type, int n_options);

struct ExecutionPlan {
  int option = -1;  // index into the option list; -1 when no option runs
  std::vector<grid::Action> primitives;  // per agent, used when option < 0
  std::vector<bool> failed_vote;         // agent voted for an option that did not start
};

/// Full-consensus vote resolution. Throws ActionError on an unknown macro id
/// or a primitive the agent's type cannot take.
ExecutionPlan resolve_votes(const std::vector<int>& selections, int n_options, const grid::GridSpec& spec);

/// Macro-observation hash of every agent: its own observation followed by its
/// teammates' shared observations.
std::vector<std::uint64_t> macro_keys(const grid::GridSpec& spec, const grid::JointState& s);

/// Per-agent sparse tabular Q over (macro-observation hash, macro id).
class ControllerQ {
 public:
  ControllerQ() = default;
  ControllerQ(const grid::GridSpec& spec, int n_options, double init = 0.0);

  int n_agents() const { return static_cast<int>(tables_.size()); }
  int n_options() const { return n_options_; }
  int n_macros() const { return kFirstOption + n_options_; }
  const std::vector<int>& legal(int agent) const { return legal_[agent]; }

  /// Missing rows read as `init` everywhere.
  double at(int agent, std::uint64_t key, int macro) const;
  double& at_mut(int agent, std::uint64_t key, int macro);
  /// Greedy legal macro, lowest id on ties.
  int greedy(int agent, std::uint64_t key) const;
  double value(int agent, std::uint64_t key) const;
  std::size_t rows(int agent) const { return tables_[agent].size(); }

  bool operator==(const ControllerQ& o) const { return tables_ == o.tables_; }

 private:
  int n_options_ = 0;
  double init_ = 0.0;
  std::vector<double> init_row_;
  std::vector<std::vector<int>> legal_;
  std::vector<std::unordered_map<std::uint64_t, std::vector<double>>> tables_;
};

/// The option library the controller chooses from.
struct OptionLibrary {
  std::vector<options::JointOption> options;
  const options::OptionKeyer* keyer = nullptr;

  int size() const { return static_cast<int>(options.size()); }
};

enum class MacroEnd { kPrimitive, kUnanimous, kStepCap, kEnvDone, kInterrupted };
const char* macro_end_name(MacroEnd e);

/// Everything that happened during one macro decision.
struct MacroRecord {
  std::vector<int> selections;
  ExecutionPlan plan;
  std::vector<grid::JointState> states;  // states[0] before, states[tau] after
  std::vector<std::vector<grid::Action>> actions;  // tau joint primitive actions
  std::vector<double> rewards;
  double discounted_return = 0.0;  // sum_t gamma^t r_t
  double bootstrap = 1.0;          // gamma^tau
  bool done = false;
  MacroEnd end = MacroEnd::kPrimitive;

  int tau() const { return static_cast<int>(actions.size()); }
};

struct MacroStepConfig {
  double gamma = 0.99;
  bool interruption = true;
};

/// Executes a resolved plan from `s`. A running option keeps control until
/// unanimous termination, its step cap, the environment horizon or (when
/// enabled and `q` is given) interruption: some agent i has
/// Q_i(h, W) < V_i(h). An option that would terminate before its first step
/// runs one No-Op step so that time always advances.
MacroRecord run_macro_step(const grid::GridSpec& spec, const grid::JointState& s, const std::vector<int>& selections,
                           const ExecutionPlan& plan, const OptionLibrary& lib, const ControllerQ* q,
                           const MacroStepConfig& cfg);

struct LearnConfig {
  double alpha = 0.1;
  double gamma = 0.99;
  bool intra_option = true;
  /// One-step backups of each agent's executed primitive on option steps.
  bool primitive_updates = true;
};

/// Controller backups for a record: SMDP backup of the running option (or a
/// one-step backup of every agent's selection), then the extra rules.
/// Returns the intra-option backup count.
int update_controller(ControllerQ& q, const grid::GridSpec& spec, const MacroRecord& rec, const OptionLibrary& lib, const LearnConfig& cfg);

/// Intra-option backups of every option other than the running one whose
/// greedy joint action exactly matches the executed joint action at a step.
/// Returns the number of (step, option) backups.
int intra_option_update(ControllerQ& q, const grid::GridSpec& spec, const MacroRecord& rec, const OptionLibrary& lib, const LearnConfig& cfg);

struct DownstreamConfig {
  long steps = 300000;  // environment steps
  double alpha = 0.1;
  double gamma = 0.99;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_decay_fraction = 0.1;
  double eps_eval = 0.05;
  int checkpoints = 10;
  int eval_episodes = 32;
  bool interruption = true;
  bool intra_option = true;
  bool primitive_updates = true;
  /// Initial controller value of every (key, macro) pair.
  double q_init = 0.0;
  std::uint64_t seed = 0;
};

struct CurvePoint {
  long step = 0;
  double fraction = 0.0;  // mean fraction of apples eaten per episode
  double ret = 0.0;       // mean undiscounted return
};

struct DownstreamResult {
  ControllerQ q;
  std::vector<CurvePoint> curve;
  long macro_decisions = 0;
  long option_starts = 0;
  long intra_backups = 0;

  double final_fraction() const { return curve.empty() ? 0.0 : curve.back().fraction; }
};

/// Optional per-record observer (transcripts, identity checks).
using RecordSink = std::function<void(const MacroRecord&)>;

/// Controller training over primitives plus `lib`. With an empty library
/// this is plain independent Q-learning.
DownstreamResult train_downstream(const grid::GridSpec& spec, const OptionLibrary& lib, const DownstreamConfig& cfg,
                                  const RecordSink& sink = {});

/// Greedy (eps_eval) evaluation from fixed reset seeds.
CurvePoint evaluate_controller(const grid::GridSpec& spec, const ControllerQ& q, const OptionLibrary& lib,
                               const DownstreamConfig& cfg, long step);

/// Reference flat independent Q-learning loop with the same schedules and
/// random streams, written without the macro machinery.
DownstreamResult train_flat_iql(const grid::GridSpec& spec, const DownstreamConfig& cfg);

/// CSV rows "seed,step,fraction,return".
void write_curve_csv(std::ostream& os, std::uint64_t seed, const std::vector<CurvePoint>& curve, bool header);

/// Line-delimited JSON transcript entry of a record.
nlohmann::json record_to_json(const MacroRecord& rec);

/// Recomputes sum_t gamma^t r_t and gamma^tau from a record's rewards.
std::pair<double, double> replay_discount(const std::vector<double>& rewards, double gamma);

}  // namespace fopt::macdec

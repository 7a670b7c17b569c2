#pragma once

// Pairwise single-agent state distances: an exact shortest-path oracle and a
// learned multi-channel successor distance.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fopt/dataset.hpp"
#include "fopt/grid.hpp"
#include "fopt/nn.hpp"

namespace fopt::cmi {
struct CmiConfig;
struct CmiDiagnostics;
}  // namespace fopt::cmi

namespace fopt::metric {

constexpr int F = grid::kNumFeatures;
using Features = std::array<double, F>;
using IntFeatures = std::array<int, F>;

/// All-pairs shortest-path step counts on one agent type's single-agent
/// transition graph (other agents ignored, initial apples treated as walls).
class ExactDistanceTable {
 public:
  grid::AgentType type() const { return type_; }
  int size() const { return static_cast<int>(states_.size()); }
  const std::vector<IntFeatures>& states() const { return states_; }
  std::optional<int> index_of(const IntFeatures& s) const;
  int at(int from, int to) const { return dist_[static_cast<std::size_t>(from) * states_.size() + to]; }
  /// Throws MetricError for states outside the table.
  int operator()(const IntFeatures& from, const IntFeatures& to) const;

 private:
  friend ExactDistanceTable build_exact_table(const grid::GridSpec&, grid::AgentType);
  grid::AgentType type_ = grid::AgentType::kFull;
  std::vector<IntFeatures> states_;  // sorted lexicographically
  std::map<IntFeatures, int> index_;
  std::vector<int> dist_;
};

/// Throws MetricError when the graph is not strongly connected.
ExactDistanceTable build_exact_table(const grid::GridSpec& spec, grid::AgentType type);

struct MetricConfig {
  std::vector<int> hidden = {64, 64};
  int dim_per_feature = 8;  // split evenly into the asymmetric (h) and symmetric (g) halves
  double lr = 1e-3;
  int batch = 100;
  long iterations = 4000;
  double horizon_mean = 10.0;  // geometric positive-pair offset, in steps
  double temperature = 1.0;
  std::uint64_t seed = 0;
  /// Features dropped from both inputs and outputs (walled-layout fallback).
  std::vector<int> omit_features;
  int log_every = 100;
};

struct Pair {
  int src;
  int goal;
};

class LearnedDistance;

/// Batched evaluation of the F distance channels for a list of
/// (source, goal) pairs, with reverse-mode gradients. Goals are embedded
/// with the type of the source they are paired with.
class PairEvaluator {
 public:
  PairEvaluator(const LearnedDistance& d, bool stop_gradient);

  /// sources/goals: F x n feature matrices in grid units. Returns the raw
  /// (uncalibrated) channels, F x pairs.
  nn::Matrix forward(const nn::Matrix& sources, std::span<const grid::AgentType> src_types,
                     const nn::Matrix& goals, std::span<const Pair> pairs);

  /// dz: F x pairs. Accumulates into whichever outputs are non-null; input
  /// gradients are in grid units.
  void backward(const nn::Matrix& dz, nn::Vector* encoder_grad, nn::Matrix* d_sources, nn::Matrix* d_goals);

 private:
  const LearnedDistance& d_;
  nn::GradTape tape_;
  int n_src_ = 0;
  int n_goal_cols_ = 0;
  int n_goals_ = 0;
  std::vector<int> goal_col_of_pair_;
  std::vector<int> goal_of_col_;
  std::vector<Pair> pairs_;
  std::vector<int> argmax_;  // per (pair, feature); -1 when the max-part is clamped at 0
  nn::Matrix gunit_;         // per (pair, feature) unit vector of g(a)-g(b), stacked
};

/// Multi-channel quasimetric d^F(s, s', type) with
///   d_f = max(0, max_k (h_f(s) - h_f(s'))_k) + ||g_f(s) - g_f(s')||
/// and a non-negative linear projection to a scalar distance.
class LearnedDistance {
 public:
  LearnedDistance() = default;
  LearnedDistance(const grid::GridSpec& spec, const MetricConfig& cfg);

  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }
  const MetricConfig& config() const { return cfg_; }
  int dim_per_feature() const { return cfg_.dim_per_feature; }
  bool feature_enabled(int f) const;

  nn::Mlp& encoder() { return encoder_; }
  const nn::Mlp& encoder() const { return encoder_; }
  nn::Vector& projection_raw() { return proj_raw_; }
  const nn::Vector& projection_raw() const { return proj_raw_; }
  /// softplus of the raw projection parameters.
  nn::Vector projection_weights() const;
  const Features& calibration() const { return calib_; }
  void set_calibration(const Features& c) { calib_ = c; }

  /// Encoder input for a batch (normalised features ++ type one-hot).
  nn::Matrix make_input(const nn::Matrix& feats, std::span<const grid::AgentType> types) const;
  const Features& feature_scale() const { return scale_; }

  /// Calibrated per-feature distances in grid units. Argument order matters:
  /// the second argument is the goal (the Fermat state when used for
  /// abstraction). Throws StateError when untrained.
  Features per_feature(const Features& src, const Features& goal, grid::AgentType type) const;
  /// Batched per_feature: columns are pairs.
  nn::Matrix per_feature_batch(const nn::Matrix& src, std::span<const grid::AgentType> types,
                               const nn::Matrix& goal) const;
  /// Projection head on raw channels.
  double projected(const Features& src, const Features& goal, grid::AgentType type) const;
  /// Sum of calibrated channels.
  double summed(const Features& src, const Features& goal, grid::AgentType type) const;

  nlohmann::json to_json() const;
  static LearnedDistance from_json(const nlohmann::json& j);

 private:
  friend class PairEvaluator;
  MetricConfig cfg_;
  nn::Mlp encoder_;
  nn::Vector proj_raw_;
  Features calib_{};
  Features scale_{};
  bool trained_ = false;
};

struct ContrastiveBatch {
  nn::Matrix anchors;    // F x B
  nn::Matrix positives;  // F x B, padded features shuffled in from other types
  std::vector<grid::AgentType> types;
};

/// Samples anchors uniformly over (transition, agent) and positives at a
/// geometric offset along the same agent's trajectory.
class ContrastiveSampler {
 public:
  ContrastiveSampler(const data::TransitionDataset& ds, double horizon_mean);
  ContrastiveBatch sample(int batch, Rng& rng) const;

 private:
  const data::TransitionDataset& ds_;
  double p_;
  std::vector<std::size_t> episode_end_;
  /// Per (type slot, feature): values of that feature held by agents of a
  /// different type that own it.
  std::array<std::array<std::vector<double>, F>, 2> foreign_values_;
};

/// Symmetrised InfoNCE over logits -d(a_i, p_j)/T. Returns the loss and,
/// when requested, accumulates gradients.
double infonce_loss(const LearnedDistance& d, const ContrastiveBatch& b, double temperature,
                    nn::Vector* encoder_grad, nn::Vector* proj_grad);

struct TrainingLog {
  std::vector<long> iteration;
  std::vector<double> loss;
};

/// Contrastive training, optionally with the CMI penalty. When `cmi` is given
/// the discriminator trains alongside on its own RNG stream.
LearnedDistance train_learned_distance(const data::TransitionDataset& ds, const MetricConfig& cfg,
                                       const cmi::CmiConfig* cmi = nullptr, TrainingLog* log = nullptr,
                                       cmi::CmiDiagnostics* cmi_diag = nullptr);

/// Rescales each channel so one-step moves along that feature cost one grid
/// unit on average.
void calibrate(LearnedDistance& d, const data::TransitionDataset& ds);

/// Convenience wrapper with argument-order contract spelled out.
Features per_feature_distance(const LearnedDistance& d, const Features& s, const Features& fermat,
                              grid::AgentType type);

int type_slot(grid::AgentType t);

}  // namespace fopt::metric

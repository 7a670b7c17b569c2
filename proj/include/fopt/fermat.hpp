#pragma once

// Fermat states (the single-agent state minimising the summed distance to
// every agent) and the relative representation built on them.

#include <filesystem>
#include <unordered_map>

#include "fopt/metric.hpp"

namespace fopt::fermat {

using metric::F;
using metric::Features;
using metric::IntFeatures;

struct ExactFermat {
  IntFeatures state{};
  int d_f = 0;
};

/// Brute force over every table state s of sum_i d(s^i, s); ties go to the
/// lexicographically smallest s.
ExactFermat fermat_exact(const grid::FactoredState& fs, const metric::ExactDistanceTable& table);

struct FermatConfig {
  std::vector<int> hidden = {64, 64};
  double lr = 1e-3;
  int batch = 100;
  long iterations = 6000;
  /// Exponent on each agent's distance in the loss.
  double power = 1.0;
  bool permute = true;
  std::uint64_t seed = 0;
  int log_every = 100;
};

/// phi: flattened factored state (per agent: normalised features ++ type
/// one-hot) to a point of the unified feature space in grid units.
class FermatEncoder {
 public:
  FermatEncoder() = default;
  FermatEncoder(const grid::GridSpec& spec, const FermatConfig& cfg);

  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }
  int n_agents() const { return static_cast<int>(types_.size()); }
  const std::vector<grid::AgentType>& types() const { return types_; }
  nn::Mlp& net() { return net_; }
  const nn::Mlp& net() const { return net_; }

  nn::Matrix make_input(const std::vector<grid::FactoredState>& states) const;
  /// Raw continuous output, F x n, grid units.
  nn::Matrix forward_raw(const nn::Matrix& input) const;
  /// Output clamped into the feature box. Throws StateError when untrained.
  nn::Matrix predict(const std::vector<grid::FactoredState>& states) const;
  Features predict(const grid::FactoredState& s) const;

  const Features& scale() const { return scale_; }
  const Features& box_hi() const { return hi_; }

  nlohmann::json to_json() const;
  static FermatEncoder from_json(const nlohmann::json& j);

 private:
  nn::Mlp net_;
  std::vector<grid::AgentType> types_;
  Features scale_{};
  Features hi_{};
  bool trained_ = false;
};

struct FermatLog {
  std::vector<long> iteration;
  std::vector<double> loss;
};

/// Mean over states of (1/N) sum_i d(s^i, phi(s))^p with the distance frozen.
/// Accumulates into `grad` (encoder parameters) when non-null.
double fermat_loss(const FermatEncoder& phi, const metric::LearnedDistance& d,
                   const std::vector<grid::FactoredState>& states, double power, nn::Vector* grad);

FermatEncoder train_fermat_encoder(const data::TransitionDataset& ds, const metric::LearnedDistance& d,
                                   const FermatConfig& cfg, FermatLog* log = nullptr);

struct RelativeRepresentation {
  std::vector<double> values;
  std::vector<int> quantized;
  Features fermat{};  // phi(s), clamped into the feature box
};

/// values[f] = sum_i d^F(s^i, phi(s))[f]; the scalar variant returns the
/// single sum over f.
RelativeRepresentation relative_representation(const grid::FactoredState& fs, const FermatEncoder& phi,
                                               const metric::LearnedDistance& d, double grain, bool scalar = false);
std::vector<RelativeRepresentation> relative_representations(const std::vector<grid::FactoredState>& states,
                                                             const FermatEncoder& phi,
                                                             const metric::LearnedDistance& d, double grain,
                                                             bool scalar = false);

using Key = std::vector<int>;

struct KeyHash {
  std::size_t operator()(const Key& k) const;
};

/// Node identity of a joint state for graph building and option rewards.
class Abstraction {
 public:
  virtual ~Abstraction() = default;
  virtual std::string name() const = 0;
  virtual Key key(const grid::JointState& s) const = 0;
  /// Batched keys; default calls key() per state.
  virtual std::vector<Key> keys(const std::vector<grid::JointState>& states) const;
};

/// Quantized relative representation, memoised on agent positions.
class RelativeAbstraction : public Abstraction {
 public:
  RelativeAbstraction(grid::GridSpec spec, const FermatEncoder& phi, const metric::LearnedDistance& d, double grain,
                      bool scalar = false);
  std::string name() const override { return scalar_ ? "relative-scalar" : "relative"; }
  Key key(const grid::JointState& s) const override;
  std::vector<Key> keys(const std::vector<grid::JointState>& states) const override;
  RelativeRepresentation representation(const grid::JointState& s) const;

 private:
  grid::GridSpec spec_;
  const FermatEncoder& phi_;
  const metric::LearnedDistance& d_;
  double grain_;
  bool scalar_;
  mutable std::unordered_map<Key, RelativeRepresentation, KeyHash> cache_;
  static constexpr std::size_t kMaxCache = 1 << 20;
};

/// Flattened agent cells; no abstraction.
class RawJointAbstraction : public Abstraction {
 public:
  std::string name() const override { return "raw-joint"; }
  Key key(const grid::JointState& s) const override;
};

/// CSV: state_id, value_0.., quantized_0..
void write_representation_csv(const std::filesystem::path& path, const std::vector<grid::JointState>& states,
                              const RelativeAbstraction& abs);

/// Every joint placement of distinct free cells (agent order significant).
std::vector<grid::JointState> enumerate_joint_states(const grid::GridSpec& spec);

}  // namespace fopt::fermat

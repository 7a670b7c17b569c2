#pragma once

// Minimal feedforward networks with exact reverse-mode gradients.
//
// Batches are column-major: each column of an input matrix is one sample.
// All parameters of a network live in one flat vector so that optimisers,
// gradient checks and serialisation treat every network uniformly.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fopt/common.hpp"

namespace fopt::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Forward intermediates of one batch. A tape is consumed by exactly one
/// backward pass. With `stop_gradient` set the pass still propagates input
/// gradients but leaves parameter gradients untouched.
class GradTape {
 public:
  explicit GradTape(bool stop_gradient = false) : stop_gradient_(stop_gradient) {}
  bool stop_gradient() const { return stop_gradient_; }
  bool recorded() const { return recorded_; }

 private:
  friend class Mlp;
  std::vector<Matrix> inputs_;  // input of layer l
  std::vector<Matrix> pre_;     // pre-activation of layer l
  bool stop_gradient_;
  bool recorded_ = false;
  bool consumed_ = false;
};

/// ReLU hidden layers, linear output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> layer_dims, std::uint64_t seed);

  static Mlp zeros(std::vector<int> layer_dims);
  /// Single linear layer with W = I and b = 0.
  static Mlp identity(int dim);

  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  int num_layers() const { return static_cast<int>(dims_.size()) - 1; }
  const std::vector<int>& layer_dims() const { return dims_; }
  std::uint64_t seed() const { return seed_; }

  Vector forward(const Vector& x) const;
  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, GradTape& tape) const;

  /// Accumulates dL/dtheta into `grad` (unless the tape stops gradients) and
  /// returns dL/dx.
  Matrix backward(GradTape& tape, const Matrix& d_out, Vector& grad) const;

  Vector& parameters() { return theta_; }
  const Vector& parameters() const { return theta_; }
  Vector zero_grad() const { return Vector::Zero(theta_.size()); }

  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<const Vector> bias(int layer) const;
  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<Vector> bias(int layer);

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  void layout();
  std::vector<int> dims_;
  std::vector<std::size_t> w_off_, b_off_;
  Vector theta_;
  std::uint64_t seed_ = 0;
};

struct AdamState {
  AdamState() = default;
  AdamState(std::size_t n, double lr) : m(Vector::Zero(n)), v(Vector::Zero(n)), lr(lr) {}

  Vector m;
  Vector v;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Throws NumericsError on non-finite gradients before
/// touching any state.
void adam_step(Eigen::Ref<Vector> params, const Vector& grads, AdamState& state);

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
/// log(sigmoid(x)) without overflow.
inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

bool all_finite(const Vector& v);

}  // namespace fopt::nn

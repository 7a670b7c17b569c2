#include "fopt/nn.hpp"

#include <cmath>

namespace fopt::nn {

Mlp::Mlp(std::vector<int> layer_dims, std::uint64_t seed) : dims_(std::move(layer_dims)), seed_(seed) {
  layout();
  Rng rng(derive_seed(seed, "mlp/init"));
  for (int l = 0; l < num_layers(); ++l) {
    auto w = weight(l);
    // He initialisation for layers feeding a ReLU; LeCun for the output.
    const double fan_in = dims_[l];
    const double scale = std::sqrt((l + 1 < num_layers() ? 2.0 : 1.0) / fan_in);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = scale * standard_normal(rng);
    }
  }
}

Mlp Mlp::zeros(std::vector<int> layer_dims) {
  Mlp m;
  m.dims_ = std::move(layer_dims);
  m.layout();
  return m;
}

Mlp Mlp::identity(int dim) {
  Mlp m = zeros({dim, dim});
  m.weight(0).setIdentity();
  return m;
}

void Mlp::layout() {
  if (dims_.size() < 2) throw ShapeError("an MLP needs at least input and output dims");
  w_off_.clear();
  b_off_.clear();
  std::size_t off = 0;
  for (int l = 0; l + 1 < static_cast<int>(dims_.size()); ++l) {
    if (dims_[l] < 1 || dims_[l + 1] < 1) throw ShapeError("layer dims must be positive");
    w_off_.push_back(off);
    off += static_cast<std::size_t>(dims_[l + 1]) * dims_[l];
    b_off_.push_back(off);
    off += dims_[l + 1];
  }
  theta_ = Vector::Zero(static_cast<Eigen::Index>(off));
}

Eigen::Map<const Matrix> Mlp::weight(int l) const {
  return {theta_.data() + w_off_[l], dims_[l + 1], dims_[l]};
}
Eigen::Map<const Vector> Mlp::bias(int l) const { return {theta_.data() + b_off_[l], dims_[l + 1]}; }
Eigen::Map<Matrix> Mlp::weight(int l) { return {theta_.data() + w_off_[l], dims_[l + 1], dims_[l]}; }
Eigen::Map<Vector> Mlp::bias(int l) { return {theta_.data() + b_off_[l], dims_[l + 1]}; }

Vector Mlp::forward(const Vector& x) const {
  Matrix m = x;
  return forward(m).col(0);
}

Matrix Mlp::forward(const Matrix& x) const {
  if (x.rows() != input_dim()) {
    throw ShapeError("input dim " + std::to_string(x.rows()) + " != " + std::to_string(input_dim()));
  }
  Matrix h = x;
  for (int l = 0; l < num_layers(); ++l) {
    Matrix z = weight(l) * h;
    z.colwise() += bias(l);
    h = (l + 1 < num_layers()) ? Matrix(z.cwiseMax(0.0)) : z;
  }
  return h;
}

Matrix Mlp::forward(const Matrix& x, GradTape& tape) const {
  if (x.rows() != input_dim()) {
    throw ShapeError("input dim " + std::to_string(x.rows()) + " != " + std::to_string(input_dim()));
  }
  if (tape.recorded_) throw TapeError("tape already holds a forward pass");
  tape.inputs_.clear();
  tape.pre_.clear();
  Matrix h = x;
  for (int l = 0; l < num_layers(); ++l) {
    tape.inputs_.push_back(h);
    Matrix z = weight(l) * h;
    z.colwise() += bias(l);
    tape.pre_.push_back(z);
    h = (l + 1 < num_layers()) ? Matrix(z.cwiseMax(0.0)) : z;
  }
  tape.recorded_ = true;
  return h;
}

Matrix Mlp::backward(GradTape& tape, const Matrix& d_out, Vector& grad) const {
  if (!tape.recorded_) throw TapeError("backward without a forward pass");
  if (tape.consumed_) throw TapeError("tape reused for a second backward pass");
  if (d_out.rows() != output_dim() || d_out.cols() != tape.pre_.back().cols()) {
    throw ShapeError("output gradient shape mismatch");
  }
  if (!tape.stop_gradient_ && grad.size() != theta_.size()) throw ShapeError("gradient buffer size mismatch");
  tape.consumed_ = true;
  Matrix delta = d_out;
  for (int l = num_layers() - 1; l >= 0; --l) {
    if (l + 1 < num_layers()) {
      delta = delta.cwiseProduct((tape.pre_[l].array() > 0.0).cast<double>().matrix());
    }
    if (!tape.stop_gradient_) {
      Eigen::Map<Matrix> gw(grad.data() + w_off_[l], dims_[l + 1], dims_[l]);
      Eigen::Map<Vector> gb(grad.data() + b_off_[l], dims_[l + 1]);
      gw.noalias() += delta * tape.inputs_[l].transpose();
      gb.noalias() += delta.rowwise().sum();
    }
    delta = weight(l).transpose() * delta;
  }
  return delta;
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json j;
  j["layer_dims"] = dims_;
  j["seed"] = seed_;
  nlohmann::json ws = nlohmann::json::array(), bs = nlohmann::json::array();
  for (int l = 0; l < num_layers(); ++l) {
    auto w = weight(l);
    std::vector<double> row_major;
    row_major.reserve(w.size());
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) row_major.push_back(w(r, c));
    }
    ws.push_back(row_major);
    auto b = bias(l);
    bs.push_back(std::vector<double>(b.data(), b.data() + b.size()));
  }
  j["weights"] = ws;
  j["biases"] = bs;
  return j;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  Mlp m = zeros(j.at("layer_dims").get<std::vector<int>>());
  m.seed_ = j.at("seed");
  for (int l = 0; l < m.num_layers(); ++l) {
    const auto w = j.at("weights").at(l).get<std::vector<double>>();
    const auto b = j.at("biases").at(l).get<std::vector<double>>();
    auto mw = m.weight(l);
    if (static_cast<Eigen::Index>(w.size()) != mw.size() || static_cast<Eigen::Index>(b.size()) != m.bias(l).size()) {
      throw ShapeError("serialized layer " + std::to_string(l) + " has wrong size");
    }
    for (Eigen::Index r = 0; r < mw.rows(); ++r) {
      for (Eigen::Index c = 0; c < mw.cols(); ++c) mw(r, c) = w[r * mw.cols() + c];
    }
    m.bias(l) = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
  }
  return m;
}

bool all_finite(const Vector& v) { return v.allFinite(); }

void adam_step(Eigen::Ref<Vector> params, const Vector& grads, AdamState& s) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw ShapeError("adam: parameter, gradient and moment shapes differ");
  }
  if (!grads.allFinite()) throw NumericsError("adam: non-finite gradient");
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params.array() -= s.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

}  // namespace fopt::nn

#pragma once

// Conditional mutual information penalty on the per-feature distance
// channels: a discriminator separates real (s_-f, s_f, z_f) triplets from
// ones whose s_-f block is borrowed from a k-nearest neighbour in (s_f, z_f).

#include <filesystem>
#include <vector>

#include "fopt/metric.hpp"

namespace fopt::cmi {

using metric::F;

struct CmiConfig {
  double weight = 0.003;
  double lr = 3e-4;
  std::vector<int> hidden = {64, 64};
  int knn = 15;
  int timesteps = 64;  // sampled timesteps per discriminator batch
  std::uint64_t seed = 0;
  int log_every = 100;
};

/// One unordered agent pair at one timestep.
struct AgentPairTuple {
  std::size_t t;
  int i;
  int j;
  metric::Features si;
  metric::Features sj;
  grid::AgentType type_i;
};

/// All C(N, 2) pairs of every given timestep, in timestep-major order.
std::vector<AgentPairTuple> make_pairs(const data::TransitionDataset& ds, std::span<const std::size_t> timesteps);

/// Input layout of a triplet column:
///   s_-f(i), s_-f(j) | s_f(i), s_f(j) | z_f | one-hot f
inline constexpr int kTripletDim = 2 * (F - 1) + 2 + 1 + F;
inline constexpr int kZRow = 2 * (F - 1) + 2;

struct PermutationBatch {
  nn::Matrix real;  // kTripletDim x (F * pairs), column f * pairs + p
  nn::Matrix fake;
  int k = 0;
};

/// Builds real triplets from pairs and their raw channel values z (F x
/// pairs) and fakes by swapping in the -f block of a random kNN neighbour.
PermutationBatch make_permutation_batch(const std::vector<AgentPairTuple>& pairs, const nn::Matrix& z,
                                        const metric::Features& feature_scale, int k, Rng& rng);

struct Discriminator {
  Discriminator() = default;
  Discriminator(const std::vector<int>& hidden, double lr, std::uint64_t seed);
  nn::Mlp net;
  nn::AdamState adam;
};

struct DiscStepResult {
  double loss = 0.0;
  double accuracy = 0.0;
  bool skipped = false;
};

/// BCE with real labelled 1 and fake labelled 0, mean over each half, then
/// one Adam step. Degenerate batches (every column identical) are skipped.
DiscStepResult discriminator_step(const PermutationBatch& batch, Discriminator& D);

/// Loss and its parameter gradient (accumulated into `grad`), no update.
double discriminator_gradient(const PermutationBatch& batch, const Discriminator& D, nn::Vector& grad,
                              double* accuracy = nullptr);

/// Loss value without an update.
double discriminator_loss(const PermutationBatch& batch, const Discriminator& D, double* accuracy = nullptr);

/// sum log(1 - sigmoid(D(real))). With `d_real` the gradient with respect to
/// the real triplet inputs is written there.
double adversarial_penalty(const PermutationBatch& batch, const Discriminator& D, nn::Matrix* d_real = nullptr);

struct CmiDiagnostics {
  struct Row {
    long iteration;
    double disc_loss;
    double disc_accuracy;
    double penalty;
    int skipped;
  };
  std::vector<Row> rows;
  /// corr[f][g] = corr(z_f, |delta feature g|); chan[f][g] = corr(z_f, z_g).
  std::vector<std::vector<double>> feature_corr;
  std::vector<std::vector<double>> channel_corr;
  void write_csv(const std::filesystem::path& path) const;
};

/// Owns the discriminator and its RNG streams during distance training.
class CmiTrainer {
 public:
  CmiTrainer(const data::TransitionDataset& ds, const CmiConfig& cfg);
  /// One discriminator update followed by accumulation of -weight * dP/dtheta
  /// into `encoder_grad`. A zero weight leaves `encoder_grad` untouched.
  void step(const metric::LearnedDistance& d, long iteration, nn::Vector& encoder_grad, CmiDiagnostics* diag);
  const Discriminator& discriminator() const { return disc_; }

 private:
  const data::TransitionDataset& ds_;
  CmiConfig cfg_;
  Discriminator disc_;
  Rng batch_rng_;
  Rng knn_rng_;
  double acc_loss_ = 0, acc_accuracy_ = 0, acc_penalty_ = 0;
  int acc_n_ = 0, acc_skipped_ = 0;
};

/// Correlations over every ordered pair of single-agent states of `type`.
void feature_correlations(const metric::LearnedDistance& d, const grid::GridSpec& spec, grid::AgentType type,
                          CmiDiagnostics& diag);

struct DisentanglementReport {
  bool own_dominates = false;
  double max_channel_corr = 0.0;
  bool no_collapse = false;
  bool ok() const { return own_dominates && no_collapse; }
};
DisentanglementReport assess_disentanglement(const CmiDiagnostics& diag, double collapse_threshold = 0.95);

/// Discrete joint pmf over (A, B, C) = (S_-f, S_f, Z_f), index (a*nb + b)*nc + c.
struct JointPmf {
  int na = 0, nb = 0, nc = 0;
  std::vector<double> p;
  double at(int a, int b, int c) const { return p[(static_cast<std::size_t>(a) * nb + b) * nc + c]; }
};

struct MiBoundReport {
  double i_ac = 0.0;          // I(S_-f; Z_f)
  double i_ab = 0.0;          // I(S_-f; S_f)
  double i_ac_given_b = 0.0;  // I(S_-f; Z_f | S_f)
  bool holds = false;         // i_ac <= i_ab + i_ac_given_b
};

/// Exact enumeration in nats. Throws DistError unless the pmf is
/// non-negative and sums to one.
MiBoundReport verify_mi_bound(const JointPmf& pmf);

}  // namespace fopt::cmi

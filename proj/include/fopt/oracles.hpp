#pragma once

// Independent checks shared by `verify`, the unit tests and the acceptance
// run: finite differences, analytic spectra, exact MI enumeration, the vote
// truth table and the framework identities.

#include <string>
#include <vector>

#include "fopt/macdec.hpp"

namespace fopt::oracles {

struct GradCheck {
  int probes = 0;
  double max_rel_err = 0.0;
  bool ok(double tol = 1e-4) const { return probes > 0 && max_rel_err <= tol; }
};

/// Central differences with step 1e-5 on `probes` random parameters (or
/// inputs) of a scalar loss sum(W .* output) with Gaussian W. Relative error
/// is |a - n| / max(|a|, |n|, 1e-6).
GradCheck gradcheck_mlp(std::uint64_t seed, int probes = 100);
GradCheck gradcheck_pair_evaluator(std::uint64_t seed, int probes = 100);
GradCheck gradcheck_discriminator(std::uint64_t seed, int probes = 100);
/// Gradient of the adversarial penalty with respect to real triplet inputs.
GradCheck gradcheck_penalty_inputs(std::uint64_t seed, int probes = 100);
GradCheck gradcheck_fermat_loss(std::uint64_t seed, int probes = 100);

/// Stop-gradient contract: a stop-gradient pair evaluation leaves the
/// encoder gradient at zero, and a short Fermat-encoder run leaves every
/// distance parameter bitwise unchanged.
bool stop_gradient_bitwise(std::uint64_t seed);

/// Max deviation from the analytic Laplacian spectra of P3 {0,1,3} and
/// K3 {0,3,3}, plus the eigenvector residual of the decomposition.
double path_p3_error();
double complete_k3_error();

struct MiSuite {
  int random_pmfs = 0;
  int holds = 0;
  bool copy_edge = false;          // Z = S_-f copy: I(A;C) = I(A;B) + I(A;C|B) = H(A) - ...
  bool independence_edge = false;  // all independent: every term 0
  bool ok() const { return random_pmfs > 0 && holds == random_pmfs && copy_edge && independence_edge; }
};
MiSuite mi_suite(int n_random, std::uint64_t seed);

struct VoteTable {
  long cases = 0;
  long mismatches = 0;
  long illegal_rejected = 0;
  bool ok() const { return cases > 0 && mismatches == 0; }
};
/// Every selection vector for N = 1..max_agents over primitives and
/// `n_options` options, for all-Type-2 and mixed teams, against a direct
/// restatement of the rule.
VoteTable vote_truth_table(int max_agents = 4, int n_options = 2);

/// Max over rollouts of |sum_t r_t - sign (e_k(s_T) - e_k(s_0))|.
double telescoping_gap(const std::vector<options::Rollout>& rollouts, const options::IntrinsicRewardSpec& reward);

/// Zero-option controller with interruption off against the reference flat
/// loop: Q tables and curves compared bitwise.
bool zero_option_identity(const grid::GridSpec& spec, macdec::DownstreamConfig cfg);

/// IQM of n equal scores equals the score.
bool iqm_identity();

struct Check {
  std::string name;
  bool ok = false;
  std::string detail;
};

/// The model-free part of the suite (fast; used by `verify`).
std::vector<Check> core_suite(std::uint64_t seed);

}  // namespace fopt::oracles

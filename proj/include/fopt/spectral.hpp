#pragma once

// Abstract state-transition graph over representation keys and the exact
// eigenbasis of its combinatorial Laplacian L = D - A.

#include <unordered_map>

#include <Eigen/Dense>

#include "fopt/fermat.hpp"

namespace fopt::spectral {

using fermat::Key;
using fermat::KeyHash;

struct AbstractGraph {
  std::vector<Key> nodes;
  std::unordered_map<Key, int, KeyHash> index;
  /// Symmetric, no self-loops. Weight 1 unless built count-weighted.
  std::vector<std::unordered_map<int, double>> adj;
  bool count_weighted = false;

  int size() const { return static_cast<int>(nodes.size()); }
  std::size_t edge_count() const;
  double degree(int i) const;
  int add_node(const Key& k);
  void add_edge(int a, int b);
  Eigen::MatrixXd laplacian() const;
  /// Connected components as node lists, largest first (ties: lowest first node).
  std::vector<std::vector<int>> components() const;
};

/// Nodes in first-seen order over (state, next) of every transition.
/// Transitions touching a node seen as a source fewer than `min_visits` times
/// are skipped; sparse tail nodes otherwise hang off the graph as near-leaves
/// and grab the lowest eigenvalues. Throws GraphError on an empty dataset.
AbstractGraph build_graph(const data::TransitionDataset& ds, const fermat::Abstraction& abs,
                          bool count_weighted = false, std::size_t max_nodes = 0, long min_visits = 1);

/// Undirected graph from an edge list over integer node ids 0..n-1.
AbstractGraph graph_from_edges(int n, const std::vector<std::pair<int, int>>& edges);

struct SpectralBasis {
  std::vector<Key> nodes;
  std::unordered_map<Key, int, KeyHash> index;
  Eigen::VectorXd eigenvalues;   // k_max + 1, ascending; index 0 is the trivial pair
  Eigen::MatrixXd eigenvectors;  // nodes x (k_max + 1)
  int k_max = 0;
  int dropped_nodes = 0;  // outside the largest component
  double residual = 0.0;  // max_k ||L e_k - lambda_k e_k||_inf
  double orthonormality = 0.0;

  int size() const { return static_cast<int>(nodes.size()); }
  /// Exact value for a stored key; otherwise the nearest stored key in L1
  /// (ties: lowest index).
  double value(int k, const Key& key) const;
  int nearest(const Key& key) const;
  std::vector<double> lookup(const Key& key) const;

  nlohmann::json to_json() const;
  static SpectralBasis from_json(const nlohmann::json& j);
};

/// First k_max + 1 eigenpairs of the largest component's Laplacian. Each
/// eigenvector's largest-magnitude entry is made positive (first such entry
/// on ties). Throws SpectralError when k_max >= component size.
SpectralBasis eigendecompose(const AbstractGraph& g, int k_max);

struct BasisCheck {
  double residual = 0.0;
  double orthonormality = 0.0;
  bool ascending = false;
  bool trivial = false;  // lambda_0 ~ 0 with a constant e_0
  bool ok(double tol = 1e-6) const { return residual <= tol && orthonormality <= tol && ascending && trivial; }
};
BasisCheck check_basis(const Eigen::MatrixXd& laplacian, const Eigen::VectorXd& eigenvalues,
                       const Eigen::MatrixXd& eigenvectors, double tol = 1e-6);

/// Laplacian of the basis' own node set restricted from `g`.
Eigen::MatrixXd restricted_laplacian(const AbstractGraph& g, const SpectralBasis& b);

/// Heatmap of eigenvector k over the free agent's cells with the other
/// agents pinned. Cells the free agent cannot take (walls, apples, pinned
/// cells) are NaN. Row-major height x width.
std::vector<double> eigenvector_field(const SpectralBasis& b, int k, const fermat::Abstraction& abs,
                                      const grid::GridSpec& spec, const std::vector<grid::Cell>& pinned,
                                      int free_agent);

/// ||u - v|| / max(||u||, ||v||) over entries finite in both; 0 when both vanish.
double field_difference(const std::vector<double>& u, const std::vector<double>& v);

}  // namespace fopt::spectral

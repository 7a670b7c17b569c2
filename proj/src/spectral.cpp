#include "fopt/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fopt::spectral {

std::size_t AbstractGraph::edge_count() const {
  std::size_t e = 0;
  for (const auto& a : adj) e += a.size();
  return e / 2;
}

double AbstractGraph::degree(int i) const {
  double d = 0.0;
  for (const auto& [j, w] : adj[i]) d += w;
  return d;
}

int AbstractGraph::add_node(const Key& k) {
  auto [it, fresh] = index.emplace(k, static_cast<int>(nodes.size()));
  if (fresh) {
    nodes.push_back(k);
    adj.emplace_back();
  }
  return it->second;
}

void AbstractGraph::add_edge(int a, int b) {
  if (a == b) return;
  if (count_weighted) {
    adj[a][b] += 1.0;
    adj[b][a] += 1.0;
  } else {
    adj[a][b] = 1.0;
    adj[b][a] = 1.0;
  }
}

Eigen::MatrixXd AbstractGraph::laplacian() const {
  const int n = size();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (const auto& [j, w] : adj[i]) {
      L(i, j) -= w;
      L(i, i) += w;
    }
  }
  return L;
}

std::vector<std::vector<int>> AbstractGraph::components() const {
  std::vector<int> comp(size(), -1);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < size(); ++s) {
    if (comp[s] >= 0) continue;
    out.emplace_back();
    std::vector<int> stack{s};
    comp[s] = static_cast<int>(out.size()) - 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      out.back().push_back(u);
      for (const auto& [v, w] : adj[u]) {
        if (comp[v] < 0) {
          comp[v] = comp[s];
          stack.push_back(v);
        }
      }
    }
    std::sort(out.back().begin(), out.back().end());
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return out;
}

AbstractGraph build_graph(const data::TransitionDataset& ds, const fermat::Abstraction& abs, bool count_weighted,
                          std::size_t max_nodes, long min_visits) {
  if (ds.transitions.empty()) throw GraphError("cannot build a graph from an empty dataset");
  AbstractGraph g;
  g.count_weighted = count_weighted;
  std::vector<grid::JointState> states;
  states.reserve(ds.size() * 2);
  for (const auto& t : ds.transitions) {
    states.push_back(t.state);
    states.push_back(t.next);
  }
  const std::vector<Key> keys = abs.keys(states);
  std::unordered_map<Key, long, KeyHash> visits;
  if (min_visits > 1) {
    for (std::size_t t = 0; t < ds.size(); ++t) ++visits[keys[2 * t]];
  }
  const auto rare = [&](const Key& k) {
    if (min_visits <= 1) return false;
    auto it = visits.find(k);
    return it == visits.end() || it->second < min_visits;
  };
  for (std::size_t t = 0; t < ds.size(); ++t) {
    const Key& a = keys[2 * t];
    const Key& b = keys[2 * t + 1];
    if (rare(a) || rare(b)) continue;
    if (max_nodes > 0) {
      const std::size_t fresh = (g.index.count(a) ? 0 : 1) + (g.index.count(b) || a == b ? 0 : 1);
      if (g.nodes.size() + fresh > max_nodes) break;
    }
    const int ia = g.add_node(a);
    const int ib = g.add_node(b);
    g.add_edge(ia, ib);
  }
  if (g.nodes.empty()) throw GraphError("no node reaches the visit threshold");
  return g;
}

AbstractGraph graph_from_edges(int n, const std::vector<std::pair<int, int>>& edges) {
  AbstractGraph g;
  for (int i = 0; i < n; ++i) g.add_node({i});
  for (auto [a, b] : edges) {
    if (a < 0 || a >= n || b < 0 || b >= n) throw GraphError("edge endpoint out of range");
    g.add_edge(a, b);
  }
  return g;
}

BasisCheck check_basis(const Eigen::MatrixXd& L, const Eigen::VectorXd& lam, const Eigen::MatrixXd& E, double tol) {
  BasisCheck c;
  for (Eigen::Index k = 0; k < E.cols(); ++k) {
    c.residual = std::max(c.residual, (L * E.col(k) - lam(k) * E.col(k)).cwiseAbs().maxCoeff());
  }
  const Eigen::MatrixXd G = E.transpose() * E - Eigen::MatrixXd::Identity(E.cols(), E.cols());
  c.orthonormality = G.cwiseAbs().maxCoeff();
  c.ascending = true;
  for (Eigen::Index k = 1; k < lam.size(); ++k) c.ascending = c.ascending && lam(k) >= lam(k - 1);
  if (E.cols() > 0) {
    const double mean = E.col(0).mean();
    c.trivial = std::abs(lam(0)) <= tol && (E.col(0).array() - mean).abs().maxCoeff() <= tol;
  }
  return c;
}

SpectralBasis eigendecompose(const AbstractGraph& g, int k_max) {
  if (g.size() == 0) throw SpectralError("graph has no nodes");
  if (k_max < 0) throw SpectralError("k_max must be non-negative");
  const auto comps = g.components();
  const std::vector<int>& keep = comps.front();
  const int n = static_cast<int>(keep.size());
  if (k_max >= n) {
    throw SpectralError("k_max " + std::to_string(k_max) + " needs more than " + std::to_string(n) + " nodes");
  }
  SpectralBasis b;
  b.k_max = k_max;
  b.dropped_nodes = g.size() - n;
  for (int i : keep) {
    b.index.emplace(g.nodes[i], static_cast<int>(b.nodes.size()));
    b.nodes.push_back(g.nodes[i]);
  }
  const Eigen::MatrixXd L = restricted_laplacian(g, b);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(L);
  if (solver.info() != Eigen::Success) throw SpectralError("eigensolver did not converge");
  b.eigenvalues = solver.eigenvalues().head(k_max + 1);
  b.eigenvectors = solver.eigenvectors().leftCols(k_max + 1);
  // The trivial eigenvector of a connected graph is exactly constant; the
  // solver returns it only up to rounding.
  b.eigenvectors.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(n)));
  b.eigenvalues(0) = 0.0;
  for (int k = 0; k <= k_max; ++k) {
    auto col = b.eigenvectors.col(k);
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index r = 0; r < col.size(); ++r) {
      if (std::abs(col(r)) > best + 1e-12) {
        best = std::abs(col(r));
        arg = r;
      }
    }
    if (col(arg) < 0) col = -col;
  }
  const BasisCheck c = check_basis(L, b.eigenvalues, b.eigenvectors);
  b.residual = c.residual;
  b.orthonormality = c.orthonormality;
  return b;
}

Eigen::MatrixXd restricted_laplacian(const AbstractGraph& g, const SpectralBasis& b) {
  const int n = b.size();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (int r = 0; r < n; ++r) {
    const int i = g.index.at(b.nodes[r]);
    for (const auto& [j, w] : g.adj[i]) {
      auto it = b.index.find(g.nodes[j]);
      if (it == b.index.end()) continue;
      L(r, it->second) -= w;
      L(r, r) += w;
    }
  }
  return L;
}

int SpectralBasis::nearest(const Key& key) const {
  auto it = index.find(key);
  if (it != index.end()) return it->second;
  int best = -1;
  long best_d = std::numeric_limits<long>::max();
  for (int i = 0; i < size(); ++i) {
    if (nodes[i].size() != key.size()) throw SpectralError("key length differs from the basis node keys");
    long d = 0;
    for (std::size_t f = 0; f < key.size(); ++f) d += std::abs(static_cast<long>(nodes[i][f]) - key[f]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  if (best < 0) throw SpectralError("empty basis");
  return best;
}

double SpectralBasis::value(int k, const Key& key) const {
  if (k < 0 || k > k_max) throw SpectralError("eigen index out of range");
  return eigenvectors(nearest(key), k);
}

std::vector<double> SpectralBasis::lookup(const Key& key) const {
  const int r = nearest(key);
  std::vector<double> out(k_max + 1);
  for (int k = 0; k <= k_max; ++k) out[k] = eigenvectors(r, k);
  return out;
}

nlohmann::json SpectralBasis::to_json() const {
  nlohmann::json j;
  j["nodes"] = nodes;
  j["eigenvalues"] = std::vector<double>(eigenvalues.data(), eigenvalues.data() + eigenvalues.size());
  std::vector<double> rm;
  rm.reserve(eigenvectors.size());
  for (Eigen::Index r = 0; r < eigenvectors.rows(); ++r) {
    for (Eigen::Index c = 0; c < eigenvectors.cols(); ++c) rm.push_back(eigenvectors(r, c));
  }
  j["eigenvectors_row_major"] = rm;
  j["k_max"] = k_max;
  j["dropped_nodes"] = dropped_nodes;
  j["residual"] = residual;
  j["orthonormality"] = orthonormality;
  return j;
}

SpectralBasis SpectralBasis::from_json(const nlohmann::json& j) {
  SpectralBasis b;
  b.nodes = j.at("nodes").get<std::vector<Key>>();
  for (std::size_t i = 0; i < b.nodes.size(); ++i) b.index.emplace(b.nodes[i], static_cast<int>(i));
  const auto lam = j.at("eigenvalues").get<std::vector<double>>();
  b.k_max = j.at("k_max");
  if (static_cast<int>(lam.size()) != b.k_max + 1) throw FormatError("eigenvalue count does not match k_max");
  b.eigenvalues = Eigen::Map<const Eigen::VectorXd>(lam.data(), static_cast<Eigen::Index>(lam.size()));
  const auto rm = j.at("eigenvectors_row_major").get<std::vector<double>>();
  const std::size_t cols = lam.size();
  if (rm.size() != b.nodes.size() * cols) throw FormatError("eigenvector matrix has the wrong size");
  b.eigenvectors.resize(static_cast<Eigen::Index>(b.nodes.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < b.nodes.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) b.eigenvectors(r, c) = rm[r * cols + c];
  }
  b.dropped_nodes = j.at("dropped_nodes");
  b.residual = j.at("residual");
  b.orthonormality = j.at("orthonormality");
  return b;
}

std::vector<double> eigenvector_field(const SpectralBasis& b, int k, const fermat::Abstraction& abs,
                                      const grid::GridSpec& spec, const std::vector<grid::Cell>& pinned,
                                      int free_agent) {
  if (static_cast<int>(pinned.size()) != spec.n_agents - 1) throw ConfigError("pin every agent but one");
  if (free_agent < 0 || free_agent >= spec.n_agents) throw ConfigError("free agent out of range");
  const std::uint32_t apples = grid::all_apples_mask(spec);
  std::vector<double> out(static_cast<std::size_t>(spec.height) * spec.width,
                          std::numeric_limits<double>::quiet_NaN());
  std::vector<grid::JointState> states;
  std::vector<std::size_t> where;
  for (int x = 0; x < spec.height; ++x) {
    for (int y = 0; y < spec.width; ++y) {
      const grid::Cell c{x, y};
      if (!grid::is_free(spec, c, apples) || std::find(pinned.begin(), pinned.end(), c) != pinned.end()) continue;
      if (spec.type_of(free_agent) == grid::AgentType::kRowOnly && y != 0) continue;
      grid::JointState s;
      s.apples = apples;
      for (int i = 0, p = 0; i < spec.n_agents; ++i) s.cells.push_back(i == free_agent ? c : pinned[p++]);
      states.push_back(std::move(s));
      where.push_back(static_cast<std::size_t>(x) * spec.width + y);
    }
  }
  const auto keys = abs.keys(states);
  for (std::size_t i = 0; i < keys.size(); ++i) out[where[i]] = b.value(k, keys[i]);
  return out;
}

double field_difference(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw ShapeError("fields differ in size");
  double du = 0, dv = 0, diff = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!std::isfinite(u[i]) || !std::isfinite(v[i])) continue;
    du += u[i] * u[i];
    dv += v[i] * v[i];
    diff += (u[i] - v[i]) * (u[i] - v[i]);
  }
  const double m = std::sqrt(std::max(du, dv));
  return m > 0 ? std::sqrt(diff) / m : 0.0;
}

}  // namespace fopt::spectral

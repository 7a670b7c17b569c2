#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "fopt/spectral.hpp"

using namespace fopt;

TEST_SUITE("spectral") {
  TEST_CASE("a dataset of one repeated state is one node") {
    data::TransitionDataset ds;
    grid::JointState s{{{1, 1}, {2, 2}, {3, 3}}, 0, 0};
    for (int i = 0; i < 5; ++i) ds.transitions.push_back({0, s, {}, s, 0.0, false});
    fermat::RawJointAbstraction raw;
    const auto g = spectral::build_graph(ds, raw);
    CHECK(g.size() == 1);
    CHECK(g.edge_count() == 0);
  }

  TEST_CASE("raw-joint nodes are the distinct joint states") {
    grid::GridSpec spec;
    const auto ds = data::collect_dataset(spec, {}, 2000, 0);
    std::set<std::vector<grid::Cell>> distinct;
    for (const auto& t : ds.transitions) {
      distinct.insert(t.state.cells);
      distinct.insert(t.next.cells);
    }
    fermat::RawJointAbstraction raw;
    CHECK(spectral::build_graph(ds, raw).size() == static_cast<int>(distinct.size()));
  }

  TEST_CASE("relative abstraction compresses the raw joint graph") {
    const auto& fx = test::small_models();
    fermat::RelativeAbstraction rel(fx.spec, fx.encoder, fx.distance, 1.0);
    fermat::RawJointAbstraction raw;
    CHECK(spectral::build_graph(fx.ds, rel).size() < spectral::build_graph(fx.ds, raw).size());
  }

  TEST_CASE("P3 and K3 spectra") {
    const auto p3 = spectral::eigendecompose(spectral::graph_from_edges(3, {{0, 1}, {1, 2}}), 2);
    CHECK(p3.eigenvalues(0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(p3.eigenvalues(1) - 1.0) <= 1e-10);
    CHECK(std::abs(p3.eigenvalues(2) - 3.0) <= 1e-10);
    const auto k3 = spectral::eigendecompose(spectral::graph_from_edges(3, {{0, 1}, {1, 2}, {0, 2}}), 2);
    CHECK(std::abs(k3.eigenvalues(1) - 3.0) <= 1e-10);
    CHECK(std::abs(k3.eigenvalues(2) - 3.0) <= 1e-10);
  }

  TEST_CASE("connected graph: trivial pair and a passing check") {
    const auto g = spectral::graph_from_edges(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}, {0, 3}});
    const auto b = spectral::eigendecompose(g, 3);
    CHECK(std::abs(b.eigenvalues(0)) <= 1e-10);
    const double c = b.eigenvectors(0, 0);
    for (int i = 1; i < 6; ++i) CHECK(b.eigenvectors(i, 0) == doctest::Approx(c));
    const auto chk = spectral::check_basis(spectral::restricted_laplacian(g, b), b.eigenvalues, b.eigenvectors);
    CHECK(chk.ok());
  }

  TEST_CASE("disconnected nodes are dropped, not decomposed") {
    const auto b = spectral::eigendecompose(spectral::graph_from_edges(5, {{0, 1}, {1, 2}, {3, 4}}), 1);
    CHECK(b.size() == 3);
    CHECK(b.dropped_nodes == 2);
    CHECK_THROWS_AS(spectral::eigendecompose(spectral::graph_from_edges(2, {{0, 1}}), 2), SpectralError);
  }

  TEST_CASE("lookup rules") {
    spectral::SpectralBasis b;
    b.nodes = {{0, 0}, {2, 0}, {5, 5}};
    for (int i = 0; i < 3; ++i) b.index[b.nodes[i]] = i;
    b.k_max = 1;
    b.eigenvalues = Eigen::VectorXd::Zero(2);
    b.eigenvectors = Eigen::MatrixXd(3, 2);
    b.eigenvectors << 1, 0.1, 1, 0.2, 1, 0.3;
    CHECK(b.value(1, {2, 0}) == 0.2);  // stored node
    CHECK(b.value(1, {1, 0}) == 0.1);  // equidistant, lowest index
    CHECK(b.value(1, {5, 4}) == 0.3);  // one grain from a unique node
    CHECK(b.lookup({6, 5}) == std::vector<double>{1, 0.3});
  }
}

#include <doctest.h>

#include <cmath>

#include "fopt/cmi.hpp"

using namespace fopt;
using nn::Matrix;

namespace {

// Columns drawn from N(mean, 1) in every row.
Matrix gaussian(int cols, double mean, Rng& rng) {
  Matrix m(cmi::kTripletDim, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < cmi::kTripletDim; ++r) m(r, c) = mean + standard_normal(rng);
  return m;
}

cmi::Discriminator zero_discriminator() {
  cmi::Discriminator D({8}, 1e-3, 0);
  D.net = nn::Mlp::zeros({cmi::kTripletDim, 8, 1});
  return D;
}

}  // namespace

TEST_SUITE("cmi-disentangle") {
  TEST_CASE("pair counts per timestep") {
    for (auto [n, per] : {std::pair{2, 1}, std::pair{4, 6}, std::pair{3, 3}}) {
      grid::GridSpec spec;
      spec.n_agents = n;
      const auto ds = data::collect_dataset(spec, {}, 20, 0);
      std::vector<std::size_t> ts(10);
      for (std::size_t i = 0; i < ts.size(); ++i) ts[i] = i;
      CHECK(cmi::make_pairs(ds, ts).size() == static_cast<std::size_t>(10 * per));
    }
  }

  TEST_CASE("logit 0 everywhere: chance loss and penalty count ln 1/2") {
    Rng rng(1);
    cmi::PermutationBatch b{gaussian(40, 0, rng), gaussian(40, 0, rng), 5};
    const auto D = zero_discriminator();
    CHECK(cmi::discriminator_loss(b, D) == doctest::Approx(2.0 * std::log(2.0)));
    CHECK(cmi::adversarial_penalty(b, D) == doctest::Approx(40 * std::log(0.5)));
  }

  TEST_CASE("untrained discriminator sits near chance") {
    Rng rng(2);
    cmi::PermutationBatch b{gaussian(200, 0, rng), gaussian(200, 0, rng), 5};
    cmi::Discriminator D({64, 64}, 3e-4, 9);
    CHECK(cmi::discriminator_loss(b, D) == doctest::Approx(2.0 * std::log(2.0)).epsilon(0.1));
  }

  TEST_CASE("a discriminator sure of every real triplet drives the penalty to -inf") {
    Rng rng(3);
    cmi::PermutationBatch b{gaussian(10, 0, rng), gaussian(10, 0, rng), 5};
    auto D = zero_discriminator();
    D.net.bias(1)(0) = 50.0;
    CHECK(cmi::adversarial_penalty(b, D) == doctest::Approx(-500.0).epsilon(1e-6));
    D.net.bias(1)(0) = 800.0;
    const double p = cmi::adversarial_penalty(b, D);
    CHECK(std::isfinite(p));
    CHECK(p < -7000.0);
  }

  TEST_CASE("separable batch is learned to near-zero loss") {
    Rng rng(4);
    cmi::PermutationBatch b{gaussian(100, 3, rng), gaussian(100, -3, rng), 5};
    cmi::Discriminator D({16}, 1e-2, 5);
    double loss = 0;
    for (int i = 0; i < 500; ++i) loss = cmi::discriminator_step(b, D).loss;
    CHECK(loss < 0.05);
  }

  TEST_CASE("indistinguishable real and fake stay at chance accuracy") {
    Rng rng(6);
    cmi::Discriminator D({16}, 1e-3, 7);
    for (int i = 0; i < 200; ++i) {
      cmi::PermutationBatch b{gaussian(100, 0, rng), gaussian(100, 0, rng), 5};
      cmi::discriminator_step(b, D);
    }
    cmi::PermutationBatch held{gaussian(4000, 0, rng), gaussian(4000, 0, rng), 5};
    double acc = 0;
    cmi::discriminator_loss(held, D, &acc);
    CHECK(acc == doctest::Approx(0.5).epsilon(0.1));
  }

  TEST_CASE("penalty weight 0 trains exactly like no penalty") {
    grid::GridSpec spec;
    const auto ds = data::collect_dataset(spec, {}, 3000, 0);
    metric::MetricConfig mc;
    mc.iterations = 60;
    cmi::CmiConfig cc;
    cc.weight = 0.0;
    const auto a = metric::train_learned_distance(ds, mc, &cc);
    const auto b = metric::train_learned_distance(ds, mc, nullptr);
    CHECK(a.to_json().dump() == b.to_json().dump());
  }

  TEST_CASE("mutual information edge cases") {
    // Z copies S_f; S_-f correlated with S_f.
    cmi::JointPmf copy{2, 2, 2, std::vector<double>(8, 0.0)};
    const double pab[2][2] = {{0.4, 0.1}, {0.1, 0.4}};
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) copy.p[(a * 2 + b) * 2 + b] = pab[a][b];
    const auto r = cmi::verify_mi_bound(copy);
    CHECK(r.i_ac == doctest::Approx(r.i_ab));
    CHECK(r.i_ac_given_b == doctest::Approx(0.0));
    CHECK(r.holds);

    cmi::JointPmf indep{2, 2, 2, std::vector<double>(8, 0.125)};
    const auto z = cmi::verify_mi_bound(indep);
    CHECK(z.i_ac == doctest::Approx(0.0));
    CHECK(z.i_ab == doctest::Approx(0.0));
    CHECK(z.i_ac_given_b == doctest::Approx(0.0));

    cmi::JointPmf bad{2, 2, 2, std::vector<double>(8, 0.2)};
    CHECK_THROWS_AS(cmi::verify_mi_bound(bad), DistError);
  }
}

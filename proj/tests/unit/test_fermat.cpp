#include <doctest.h>

#include "fopt/common.hpp"
#include "fixtures.hpp"

using namespace fopt;

namespace {
grid::FactoredState factored(std::vector<double> v) {
  return {static_cast<int>(v.size() / 2), std::move(v)};
}
}  // namespace

TEST_SUITE("fermat-abstraction") {
  TEST_CASE("exact Fermat state examples") {
    grid::GridSpec spec;
    const auto t = metric::build_exact_table(spec, grid::AgentType::kFull);
    const auto same = fermat::fermat_exact(factored({2, 3, 2, 3, 2, 3}), t);
    CHECK(same.state == metric::IntFeatures{2, 3});
    CHECK(same.d_f == 0);

    // coordinate-wise median under Manhattan
    const auto tri = fermat::fermat_exact(factored({0, 0, 0, 4, 4, 0}), t);
    CHECK(tri.state == metric::IntFeatures{0, 0});
    CHECK(tri.d_f == 8);

    // any x in [0, 4] with y = 0 is optimal; lexicographic tie-break
    const auto two = fermat::fermat_exact(factored({0, 0, 4, 0}), t);
    CHECK(two.state == metric::IntFeatures{0, 0});
    CHECK(two.d_f == 4);
  }

  TEST_CASE("exact Fermat distance is minimal over every cell") {
    grid::GridSpec spec;
    const auto t = metric::build_exact_table(spec, grid::AgentType::kFull);
    Rng rng(3);
    bool ok = true;
    for (int trial = 0; trial < 50; ++trial) {
      const auto s = grid::reset(spec, rng());
      const auto fs = grid::factorize(s, spec);
      const auto ex = fermat::fermat_exact(fs, t);
      for (const auto& c : t.states()) {
        int sum = 0;
        for (const auto& cell : s.cells) sum += t({cell.x, cell.y}, c);
        ok = ok && ex.d_f <= sum;
      }
    }
    CHECK(ok);
  }

  TEST_CASE("encoder places identical agents near their shared cell") {
    const auto& fx = test::small_models();
    double worst = 0.0;
    for (int x = 0; x < 7; ++x)
      for (int y = 0; y < 7; ++y) {
        const auto p = fx.encoder.predict(factored({double(x), double(y), double(x), double(y), double(x), double(y)}));
        worst = std::max({worst, std::abs(p[0] - x), std::abs(p[1] - y)});
      }
    CHECK(worst <= 1.0);
  }

  TEST_CASE("encoder output is close to order invariant") {
    const auto& fx = test::small_models();
    Rng rng(4);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const auto s = grid::reset(fx.spec, rng());
      auto r = s;
      std::swap(r.cells[0], r.cells[2]);
      const auto a = fx.encoder.predict(grid::factorize(s, fx.spec));
      const auto b = fx.encoder.predict(grid::factorize(r, fx.spec));
      worst = std::max({worst, std::abs(a[0] - b[0]), std::abs(a[1] - b[1])});
    }
    CHECK(worst <= 1.0);
  }

  TEST_CASE("relative representation of a collapsed team is near zero") {
    const auto& fx = test::small_models();
    const auto rep = fermat::relative_representation(factored({3, 3, 3, 3, 3, 3}), fx.encoder, fx.distance, 1.0);
    CHECK(rep.values[0] + rep.values[1] <= 1.5);
    CHECK(rep.quantized[0] <= 1);
    CHECK(rep.quantized[1] <= 1);
  }

  TEST_CASE("x-only spread loads the x component") {
    const auto& fx = test::small_models();
    // agents at x = 0, 3, 6 on column 3: sum |x - median| = 6
    const auto rep = fermat::relative_representation(factored({0, 3, 3, 3, 6, 3}), fx.encoder, fx.distance, 1.0);
    CHECK(rep.values[0] > 2.0 * rep.values[1]);
    CHECK(rep.values[0] == doctest::Approx(6.0).epsilon(0.5));
  }

  TEST_CASE("scalar variant sums the channels") {
    const auto& fx = test::small_models();
    const auto fs = factored({0, 1, 4, 6, 2, 2});
    const auto multi = fermat::relative_representation(fs, fx.encoder, fx.distance, 1.0);
    const auto scalar = fermat::relative_representation(fs, fx.encoder, fx.distance, 1.0, true);
    REQUIRE(scalar.values.size() == 1);
    CHECK(scalar.values[0] == doctest::Approx(multi.values[0] + multi.values[1]));
  }

  TEST_CASE("untrained encoder refuses to predict") {
    grid::GridSpec spec;
    fermat::FermatEncoder phi(spec, {});
    CHECK_THROWS_AS(phi.predict(factored({0, 0, 1, 1, 2, 2})), StateError);
  }
}

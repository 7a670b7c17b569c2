#include <doctest.h>

#include "fopt/oracles.hpp"
#include "fopt/options.hpp"

using namespace fopt;
using grid::Cell;

namespace {

// Basis over raw-joint keys with given e_1 values.
spectral::SpectralBasis two_node_basis(const fermat::Key& a, double ea, const fermat::Key& b, double eb) {
  spectral::SpectralBasis s;
  s.nodes = {a, b};
  s.index[a] = 0;
  s.index[b] = 1;
  s.k_max = 1;
  s.eigenvalues = Eigen::VectorXd::Zero(2);
  s.eigenvectors = Eigen::MatrixXd(2, 2);
  s.eigenvectors << 0.7, ea, 0.7, eb;
  return s;
}

grid::GridSpec single_agent(int h, int w) {
  grid::GridSpec spec;
  spec.height = h;
  spec.width = w;
  spec.n_agents = 1;
  spec.horizon = 200;
  return spec;
}

}  // namespace

TEST_SUITE("eigenoptions") {
  TEST_CASE("intrinsic reward formula") {
    fermat::RawJointAbstraction raw;
    grid::JointState s{{{0, 0}}, 0, 0}, t{{{0, 1}}, 0, 0};
    const auto b = two_node_basis(raw.key(s), 0.2, raw.key(t), 0.5);
    options::IntrinsicRewardSpec plus{&b, &raw, 1, 1}, minus{&b, &raw, 1, -1};
    CHECK(plus(s, t) == doctest::Approx(0.3));
    CHECK(minus(s, t) == doctest::Approx(-0.3));
    CHECK(plus(s, s) == 0.0);
  }

  TEST_CASE("rewards telescope along any trajectory") {
    grid::GridSpec spec;
    const auto ds = data::collect_dataset(spec, {}, 3000, 0);
    fermat::RawJointAbstraction raw;
    const auto b = spectral::eigendecompose(spectral::build_graph(ds, raw), 2);
    options::IntrinsicRewardSpec rs{&b, &raw, 2, -1};
    options::Rollout r;
    const auto [begin, end] = ds.episodes().front();
    for (std::size_t i = begin; i < end; ++i) {
      if (i == begin) r.states.push_back(ds.transitions[i].state);
      r.states.push_back(ds.transitions[i].next);
      r.rewards.push_back(rs(ds.transitions[i].state, ds.transitions[i].next));
    }
    CHECK(oracles::telescoping_gap({r}, rs) <= 1e-12);
  }

  TEST_CASE("greedy choice: termination wins ties, illegal actions never chosen") {
    options::QRow q{};
    CHECK(options::greedy(q, grid::AgentType::kFull) == options::kTerminate);
    q[static_cast<int>(grid::Action::kLeft)] = 5.0;
    CHECK(options::greedy(q, grid::AgentType::kFull) == static_cast<int>(grid::Action::kLeft));
    CHECK(options::greedy(q, grid::AgentType::kRowOnly) == options::kTerminate);
    q[static_cast<int>(grid::Action::kUp)] = 1.0;
    CHECK(options::greedy(q, grid::AgentType::kRowOnly) == static_cast<int>(grid::Action::kUp));
  }

  TEST_CASE("option ids") {
    CHECK(options::option_id(1, 1) == 0);
    CHECK(options::option_id(1, -1) == 1);
    CHECK(options::option_id(3, -1) == 5);
    CHECK_THROWS_AS(options::option_id(0, 1), ConfigError);
  }

  TEST_CASE("an option whose agents all prefer termination has length 0") {
    grid::GridSpec spec;
    options::OptionKeyer keyer(spec, options::KeyMode::kJoint, nullptr);
    options::JointOption o;
    o.mode = options::KeyMode::kJoint;
    o.q.resize(3);
    const auto r = options::rollout_option(o, keyer, spec, grid::reset(spec, 0));
    CHECK(r.actions.empty());
    CHECK(r.reason == options::Termination::kUnanimous);
  }

  TEST_CASE("an option that never terminates stops at the step cap") {
    const auto spec = single_agent(2, 2);
    options::OptionKeyer keyer(spec, options::KeyMode::kJoint, nullptr);
    options::JointOption o;
    o.mode = options::KeyMode::kJoint;
    o.q.resize(1);
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 2; ++y) {
        auto& row = o.q[0].mutable_row(keyer.keys({{{x, y}}, 0, 0})[0]);
        row[static_cast<int>(grid::Action::kNoop)] = 1.0;
        row[options::kTerminate] = -1.0;
      }
    const auto r = options::rollout_option(o, keyer, spec, {{{0, 0}}, 0, 0});
    CHECK(r.actions.size() == 50);
    CHECK(r.reason == options::Termination::kStepCap);
  }

  TEST_CASE("termination needs every agent") {
    const auto prim = options::to_primitives({options::kTerminate, static_cast<int>(grid::Action::kUp)});
    CHECK(prim == std::vector<grid::Action>{grid::Action::kNoop, grid::Action::kUp});
  }

  TEST_CASE("options for +e and -e learn different values") {
    grid::GridSpec spec;
    spec.width = spec.height = 5;
    spec.n_agents = 2;
    const auto ds = data::collect_dataset(spec, {}, 5000, 0);
    fermat::RawJointAbstraction raw;
    const auto b = spectral::eigendecompose(spectral::build_graph(ds, raw), 1);
    options::OptionKeyer keyer(spec, options::KeyMode::kJoint, nullptr);
    options::OptionConfig oc;
    oc.steps = 5000;
    oc.mode = options::KeyMode::kJoint;
    const auto p = options::train_option(spec, {&b, &raw, 1, 1}, keyer, oc, 0);
    const auto m = options::train_option(spec, {&b, &raw, 1, -1}, keyer, oc, 1);
    double diff = 0.0;
    for (const auto& [key, row] : p.q[0].rows()) {
      const auto& other = m.q[0].row(key);
      for (int a = 0; a < options::kNumOptionActions; ++a) diff = std::max(diff, std::abs(row[a] - other[a]));
    }
    CHECK(diff > 0.0);
  }

  TEST_CASE("json round trip keeps the tables") {
    options::JointOption o;
    o.q.resize(2);
    o.q[1].mutable_row(42)[3] = 0.25;
    const auto back = options::JointOption::from_json(o.to_json());
    CHECK(back.q[1] == o.q[1]);
    CHECK(back.step_cap == 50);
  }
}

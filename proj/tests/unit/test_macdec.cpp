#include <doctest.h>

#include <sstream>

#include "fopt/macdec.hpp"
#include "fopt/oracles.hpp"

using namespace fopt;
using grid::Action;
using macdec::kFirstOption;

namespace {

grid::GridSpec column_grid() {
  grid::GridSpec spec;
  spec.width = spec.height = 5;
  spec.n_agents = 1;
  spec.horizon = 200;
  return spec;
}

grid::JointState at(int x, int y) { return {{{x, y}}, 0, 0}; }

// Single-agent option over joint keys: per row x, the preferred action.
options::JointOption row_policy(const options::OptionKeyer& keyer, const std::function<int(int)>& choice) {
  options::JointOption o;
  o.mode = options::KeyMode::kJoint;
  o.q.resize(1);
  for (int x = 0; x < 5; ++x)
    for (int y = 0; y < 5; ++y) o.q[0].mutable_row(keyer.keys(at(x, y))[0])[choice(x)] = 1.0;
  return o;
}

int up_until_top(int x) { return x == 0 ? options::kTerminate : static_cast<int>(Action::kUp); }

}  // namespace

TEST_SUITE("macdec-exec") {
  TEST_CASE("vote resolution examples") {
    grid::GridSpec spec;
    const int opt3 = kFirstOption + 3;
    const auto all = macdec::resolve_votes({opt3, opt3, opt3}, 4, spec);
    CHECK(all.option == 3);

    const auto split = macdec::resolve_votes({opt3, opt3, static_cast<int>(Action::kUp)}, 4, spec);
    CHECK(split.option == -1);
    CHECK(split.primitives == std::vector<Action>{Action::kNoop, Action::kNoop, Action::kUp});
    CHECK(split.failed_vote == std::vector<bool>{true, true, false});

    const auto prim = macdec::resolve_votes({1, 2, 5}, 4, spec);
    CHECK(prim.option == -1);
    CHECK(prim.primitives == std::vector<Action>{Action::kUp, Action::kDown, Action::kLoad});

    CHECK_THROWS_AS(macdec::resolve_votes({kFirstOption + 4, 0, 0}, 4, spec), ActionError);
    grid::GridSpec mixed = spec;
    mixed.agent_types = {grid::AgentType::kRowOnly, grid::AgentType::kFull, grid::AgentType::kFull};
    CHECK_THROWS_AS(macdec::resolve_votes({static_cast<int>(Action::kLeft), 0, 0}, 4, mixed), ActionError);
  }

  TEST_CASE("vote table for up to four agents") {
    const auto t = oracles::vote_truth_table(4, 2);
    CHECK(t.cases > 0);
    CHECK(t.mismatches == 0);
  }

  TEST_CASE("discounted return and bootstrap of a four-step option") {
    const auto [ret, boot] = macdec::replay_discount({0, 0, 1, 0}, 0.99);
    CHECK(ret == doctest::Approx(0.99 * 0.99));
    CHECK(boot == doctest::Approx(std::pow(0.99, 4)));
  }

  TEST_CASE("SMDP backup of a fabricated option record") {
    const auto spec = column_grid();
    macdec::ControllerQ q(spec, 1);
    macdec::MacroRecord rec;
    rec.selections = {kFirstOption};
    rec.plan.option = 0;
    for (int x = 4; x >= 0; --x) rec.states.push_back(at(x, 2));
    rec.actions.assign(4, {Action::kUp});
    rec.rewards = {0, 0, 1, 0};
    std::tie(rec.discounted_return, rec.bootstrap) = macdec::replay_discount(rec.rewards, 0.99);
    rec.end = macdec::MacroEnd::kUnanimous;
    const auto k0 = macdec::macro_keys(spec, rec.states[0])[0];
    const auto kt = macdec::macro_keys(spec, rec.states.back())[0];
    q.at_mut(0, kt, 2) = 0.5;  // V at the end state
    macdec::OptionLibrary lib;
    macdec::LearnConfig lc;
    lc.intra_option = false;
    lc.primitive_updates = false;
    macdec::update_controller(q, spec, rec, lib, lc);
    CHECK(q.at(0, k0, kFirstOption) == doctest::Approx(0.1 * (0.99 * 0.99 + std::pow(0.99, 4) * 0.5)));
  }

  TEST_CASE("primitive step is a one-step backup") {
    const auto spec = column_grid();
    macdec::ControllerQ q(spec, 0);
    const auto s = at(2, 2);
    const auto plan = macdec::resolve_votes({static_cast<int>(Action::kRight)}, 0, spec);
    const auto rec = macdec::run_macro_step(spec, s, {static_cast<int>(Action::kRight)}, plan, {}, &q, {});
    REQUIRE(rec.tau() == 1);
    CHECK(rec.states.back() == grid::JointState{{{2, 3}}, 0, 1});
    const auto kn = macdec::macro_keys(spec, rec.states.back())[0];
    q.at_mut(0, kn, 0) = 2.0;
    macdec::update_controller(q, spec, rec, {}, {});
    CHECK(q.at(0, macdec::macro_keys(spec, s)[0], static_cast<int>(Action::kRight)) == doctest::Approx(0.1 * 0.99 * 2.0));
  }

  TEST_CASE("interruption when the option falls below the agent's value") {
    const auto spec = column_grid();
    options::OptionKeyer keyer(spec, options::KeyMode::kJoint, nullptr);
    macdec::OptionLibrary lib{{row_policy(keyer, up_until_top)}, &keyer};
    macdec::ControllerQ q(spec, 1);
    for (int x = 0; x < 5; ++x)
      for (int y = 0; y < 5; ++y) q.at_mut(0, macdec::macro_keys(spec, at(x, y))[0], kFirstOption) = -1.0;
    const std::vector<int> sel = {kFirstOption};
    const auto plan = macdec::resolve_votes(sel, 1, spec);
    const auto on = macdec::run_macro_step(spec, at(4, 2), sel, plan, lib, &q, {0.99, true});
    CHECK(on.end == macdec::MacroEnd::kInterrupted);
    CHECK(on.tau() == 1);
    const auto off = macdec::run_macro_step(spec, at(4, 2), sel, plan, lib, &q, {0.99, false});
    CHECK(off.end == macdec::MacroEnd::kUnanimous);
    CHECK(off.tau() == 4);
  }

  TEST_CASE("an option ending at initiation still takes one No-Op step") {
    const auto spec = column_grid();
    options::OptionKeyer keyer(spec, options::KeyMode::kJoint, nullptr);
    macdec::OptionLibrary lib{{row_policy(keyer, up_until_top)}, &keyer};
    const std::vector<int> sel = {kFirstOption};
    const auto rec = macdec::run_macro_step(spec, at(0, 1), sel, macdec::resolve_votes(sel, 1, spec), lib, nullptr, {});
    CHECK(rec.tau() == 1);
    CHECK(rec.actions[0] == std::vector<Action>{Action::kNoop});
  }

  TEST_CASE("intra-option backups count matching steps") {
    const auto spec = column_grid();
    options::OptionKeyer keyer(spec, options::KeyMode::kJoint, nullptr);
    const auto up = row_policy(keyer, up_until_top);
    const auto half = row_policy(keyer, [](int x) { return static_cast<int>(x >= 3 ? Action::kUp : Action::kDown); });
    const auto down = row_policy(keyer, [](int) { return static_cast<int>(Action::kDown); });
    const std::vector<int> sel = {kFirstOption};
    macdec::LearnConfig lc;
    auto count = [&](const options::JointOption& other) {
      macdec::OptionLibrary lib{{up, other}, &keyer};
      const auto rec = macdec::run_macro_step(spec, at(4, 2), sel, macdec::resolve_votes(sel, 2, spec), lib, nullptr, {});
      REQUIRE(rec.tau() == 4);
      macdec::ControllerQ q(spec, 2);
      return macdec::intra_option_update(q, spec, rec, lib, lc);
    };
    CHECK(count(up) == 4);
    CHECK(count(half) == 2);
    CHECK(count(down) == 0);
  }

  TEST_CASE("no options reduces to flat IQL") {
    grid::GridSpec spec;
    spec.width = spec.height = 5;
    spec.n_agents = 2;
    spec.apples = {{{2, 2}, 1}};
    grid::make_forced_coop(spec);
    macdec::DownstreamConfig dc;
    dc.steps = 3000;
    dc.checkpoints = 3;
    dc.eval_episodes = 4;
    dc.q_init = 0.05;
    CHECK(oracles::zero_option_identity(spec, dc));
  }

  TEST_CASE("curve CSV rows per seed") {
    std::ostringstream os;
    macdec::write_curve_csv(os, 3, {{100, 0.5, 1.0}, {200, 0.75, 1.5}}, true);
    CHECK(os.str() == "seed,step,fraction,return\n3,100,0.5,1\n3,200,0.75,1.5\n");
  }
}

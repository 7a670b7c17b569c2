#include <doctest.h>

#include <fstream>
#include <iterator>
#include <set>

#include "fopt/dataset.hpp"
#include "test_util.hpp"

using namespace fopt;
using grid::Action;
using grid::Cell;

TEST_SUITE("gridworld") {
  TEST_CASE("reset places agents on distinct cells, deterministically") {
    grid::GridSpec spec;
    const auto a = grid::reset(spec, 0);
    const auto b = grid::reset(spec, 0);
    CHECK(a == b);
    std::set<Cell> cells(a.cells.begin(), a.cells.end());
    CHECK(cells.size() == 3);
  }

  TEST_CASE("more agents than free cells is rejected") {
    grid::GridSpec spec;
    spec.n_agents = 49;
    spec.walls = {{3, 3}};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }

  TEST_CASE("different seeds give different layouts") {
    // 49*48*47 = 110544 ordered layouts; a collision among 100 draws has
    // probability about 4%, two collisions well under 1%.
    grid::GridSpec spec;
    std::set<std::vector<Cell>> layouts;
    for (std::uint64_t s = 0; s < 100; ++s) layouts.insert(grid::reset(spec, s).cells);
    CHECK(layouts.size() >= 98);
  }

  TEST_CASE("moving into the boundary keeps the agent in place") {
    grid::GridSpec spec;
    grid::JointState s{{{0, 0}, {3, 3}, {5, 5}}, 0, 0};
    const std::vector<Action> acts = {Action::kLeft, Action::kNoop, Action::kNoop};
    const auto r = grid::step(spec, s, acts);
    CHECK(r.state.cells[0] == Cell{0, 0});
    const std::vector<Action> up = {Action::kUp, Action::kNoop, Action::kNoop};
    CHECK(grid::step(spec, s, up).state.cells[0] == Cell{0, 0});
  }

  TEST_CASE("forced cooperation needs every agent to load") {
    grid::GridSpec spec;
    spec.apples = {{{3, 3}, 1}, {{0, 6}, 1}};
    grid::make_forced_coop(spec);
    const std::vector<Action> load(3, Action::kLoad);

    grid::JointState partial{{{2, 3}, {4, 3}, {6, 0}}, grid::all_apples_mask(spec), 0};
    const auto r1 = grid::step(spec, partial, load);
    CHECK(r1.state.apples == grid::all_apples_mask(spec));
    CHECK(r1.reward == 0.0);

    grid::JointState all{{{2, 3}, {4, 3}, {3, 2}}, grid::all_apples_mask(spec), 0};
    const auto r2 = grid::step(spec, all, load);
    CHECK(r2.state.apples == 0b10u);
    CHECK(r2.reward == doctest::Approx(0.5));
    CHECK(r2.apples_eaten == 1);
  }

  TEST_CASE("row-only agents cannot move sideways") {
    CHECK_FALSE(grid::is_legal(grid::AgentType::kRowOnly, Action::kLeft));
    CHECK_FALSE(grid::is_legal(grid::AgentType::kRowOnly, Action::kRight));
    CHECK(grid::is_legal(grid::AgentType::kRowOnly, Action::kUp));
    CHECK(grid::legal_actions(grid::AgentType::kFull).size() == 6);
  }

  TEST_CASE("factorize splits and pads") {
    grid::GridSpec spec;
    spec.n_agents = 2;
    grid::JointState s{{{1, 2}, {3, 4}}, 0, 0};
    CHECK(grid::factorize(s, spec).values == std::vector<double>{1, 2, 3, 4});

    spec.agent_types = {grid::AgentType::kRowOnly, grid::AgentType::kFull};
    grid::JointState h{{{3, 0}, {1, 5}}, 0, 0};
    CHECK(grid::factorize(h, spec).values == std::vector<double>{3, 0, 1, 5});

    grid::GridSpec three;
    grid::JointState same{{{5, 5}, {5, 5}, {5, 5}}, 0, 0};
    const auto fs = grid::factorize(same, three);
    for (int i = 0; i < 3; ++i) CHECK(fs.agent(i)[0] == 5.0);
    for (int i = 0; i < 3; ++i) CHECK(fs.agent(i)[1] == 5.0);
  }

  TEST_CASE("dataset count, determinism and replay") {
    grid::GridSpec spec;
    const auto ds = data::collect_dataset(spec, {}, 100, 0);
    CHECK(ds.size() == 100);
    const auto dir = test::temp_dir("grid-ds");
    data::save_dataset(ds, dir / "a.bin");
    data::save_dataset(data::collect_dataset(spec, {}, 100, 0), dir / "b.bin");
    CHECK(test::read_file(dir / "a.bin") == test::read_file(dir / "b.bin"));
    CHECK(data::load_dataset(dir / "a.bin").size() == 100);
    for (const auto& t : ds.transitions) {
      const auto r = grid::step(spec, t.state, t.actions, false);
      CHECK(r.state == t.next);
      CHECK(r.reward == t.reward);
    }
  }

  TEST_CASE("random data covers every free cell for every agent") {
    grid::GridSpec spec;
    const auto ds = data::collect_dataset(spec, {}, 50000, 0);
    std::vector<std::set<Cell>> seen(3);
    for (const auto& t : ds.transitions)
      for (int i = 0; i < 3; ++i) seen[i].insert(t.state.cells[i]);
    for (int i = 0; i < 3; ++i) CHECK(seen[i].size() == 49);
  }
}

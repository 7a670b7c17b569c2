#include <doctest.h>

#include <regex>
#include <set>
#include <sstream>

#include "fopt/pipeline.hpp"
#include "fopt/plot.hpp"
#include "fopt/scenarios.hpp"
#include "test_util.hpp"

using namespace fopt;
namespace fs = std::filesystem;

#ifndef FOPT_GOLDEN_DIR
#error "FOPT_GOLDEN_DIR must point at tests/golden"
#endif

namespace {

// Tiny end-to-end settings for exercising the CLI paths.
config::PipelineConfig tiny() {
  auto c = config::preset("forage-7x7");
  for (auto [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"dataset.transitions", "3000"}, {"metric.iterations", "100"}, {"fermat.iterations", "100"},
           {"options.steps", "3000"}, {"downstream.steps", "3000"}, {"discover.k", "1"},
           {"experiment.seeds", "0-4"}, {"experiment.sweep_counts", "0,2"}, {"experiment.bootstrap", "1000"}})
    config::set_value(c, k, v);
  config::validate(c);
  return c;
}

std::string golden(const std::string& name) { return test::read_file(fs::path(FOPT_GOLDEN_DIR) / name); }

std::set<std::string> fills(const std::string& svg) {
  std::set<std::string> out;
  const std::regex re("<rect x=\"\\d+\" y=\"\\d+\" width=\"24\" height=\"24\" fill=\"(#[0-9a-f]{6})\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it)
    out.insert((*it)[1]);
  return out;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("every preset validates and round-trips through its dump") {
    for (const auto& name : config::preset_names()) {
      CAPTURE(name);
      const auto c = config::preset(name);
      CHECK_NOTHROW(config::validate(c));
      std::istringstream in(config::dump(c));
      CHECK(config::dump(config::parse(in)) == config::dump(c));
    }
  }

  TEST_CASE("config dump matches the golden file") {
    CHECK(config::dump(config::preset("empty-7x7")) == golden("empty-7x7.cfg"));
  }

  TEST_CASE("config errors") {
    auto c = config::preset("empty-7x7");
    CHECK_THROWS_AS(config::set_value(c, "metric.nonsense", "1"), ConfigError);
    CHECK_THROWS_AS(config::set_value(c, "metric.lr", "fast"), ConfigError);
    CHECK_THROWS_AS(config::preset("no-such-preset"), ConfigError);
    config::set_value(c, "experiment.sweep_counts", "0,12");
    CHECK_THROWS_AS(config::validate(c), ConfigError);
    std::istringstream late("metric.lr = 0.01\npreset = empty-7x7\n");
    CHECK_THROWS_AS(config::parse(late), ConfigError);
  }

  TEST_CASE("seed ranges") {
    auto c = config::preset("empty-7x7");
    config::set_value(c, "experiment.seeds", "0-3, 7");
    CHECK(c.seeds == std::vector<int>{0, 1, 2, 3, 7});
  }

  TEST_CASE("stage hashes change only downstream of an edit") {
    const auto a = config::preset("forage-7x7");
    auto b = a;
    config::set_value(b, "options.steps", "1234");
    using config::Stage;
    for (auto s : {Stage::kCollect, Stage::kMetric, Stage::kFermat, Stage::kDiscover})
      CHECK(config::stage_hash(a, s) == config::stage_hash(b, s));
    CHECK(config::stage_hash(a, Stage::kOptions) != config::stage_hash(b, Stage::kOptions));
    CHECK(config::stage_hash(a, Stage::kEvaluate) != config::stage_hash(b, Stage::kEvaluate));
    auto c = a;
    config::set_seed(c, 9);
    CHECK(config::stage_hash(a, Stage::kCollect) != config::stage_hash(c, Stage::kCollect));
  }

  TEST_CASE("mixed-type presets") {
    const auto two = scenarios::scenario_10x10_2ag();
    CHECK(two.grid.agent_types == std::vector<grid::AgentType>{grid::AgentType::kRowOnly, grid::AgentType::kFull});
    const auto three = scenarios::scenario_15x15_3ag();
    CHECK(three.grid.width == 15);
    CHECK(three.grid.agent_types.size() == 3);
  }

  TEST_CASE("diverging ramp") {
    CHECK(plot::hex_color(plot::diverging(-1.0)) == "#2166ac");
    CHECK(plot::hex_color(plot::diverging(0.0)) == "#f7f7f7");
    CHECK(plot::hex_color(plot::diverging(1.0)) == "#b2182b");
    CHECK(plot::diverging(5.0) == plot::diverging(1.0));
    CHECK(plot::hex_color(plot::diverging(std::nan(""))) == "#999999");
  }

  TEST_CASE("a constant field is one colour; heatmap matches the golden file") {
    const std::vector<double> flat(12, 0.4);
    CHECK(fills(plot::heatmap_svg(flat, 3, 4, "constant")).size() == 1);
    std::vector<double> ramp = {-1, -0.5, 0, 0.5, 1, std::nan("")};
    const auto svg = plot::heatmap_svg(ramp, 2, 3, "ramp", {{0, 1}});
    CHECK(fills(svg).size() == 6);  // five ramp colours and grey
    CHECK(svg == golden("heatmap_2x3.svg"));
  }

  TEST_CASE("IQM and bootstrap interval") {
    CHECK(stats::iqm(std::vector<double>{1, 2, 3, 4, 100, -50, 2.5, 3.5}) == doctest::Approx(2.75));
    CHECK(oracles::iqm_identity());
    const std::vector<double> x = {0.1, 0.4, 0.35, 0.8, 0.5, 0.45, 0.6, 0.2, 0.55, 0.3};
    const auto a = stats::bootstrap_iqm(x, 2000, 0.95, 1);
    const auto b = stats::bootstrap_iqm(x, 2000, 0.95, 1);
    CHECK(a.lo == b.lo);
    CHECK(a.lo <= a.point);
    CHECK(a.point <= a.hi);
  }

  TEST_CASE("commands: determinism, exit codes and verify") {
    const auto dir = test::temp_dir("harness-cli");
    const auto cfg = tiny();
    std::ostringstream log, err;
    using pipeline::run_command;
    CHECK(run_command("discover", cfg, dir, log, err) == pipeline::kMissingUpstream);
    CHECK(err.str().find("run `collect` first") != std::string::npos);
    CHECK(run_command("collect", cfg, dir, log, err) == pipeline::kOk);
    const auto first = test::read_file(dir / "dataset.bin");
    CHECK(run_command("collect", cfg, dir, log, err) == pipeline::kOk);
    CHECK(test::read_file(dir / "dataset.bin") == first);
    CHECK(run_command("train-fermat", cfg, dir, log, err) == pipeline::kMissingUpstream);
    for (const char* c : {"train-metric", "train-fermat", "discover", "train-options", "evaluate", "sweep-options", "plot"}) {
      CAPTURE(c);
      CHECK(run_command(c, cfg, dir, log, err) == pipeline::kOk);
    }
    CHECK(run_command("verify", cfg, dir, log, err) == pipeline::kOk);
    CHECK(fs::exists(dir / "curves_flat.csv"));
    CHECK(fs::exists(dir / "plots" / "sweep.svg"));
    CHECK(run_command("bogus", cfg, dir, log, err) == pipeline::kInvalid);

    // A changed upstream key makes downstream artifacts stale.
    auto changed = cfg;
    config::set_value(changed, "metric.lr", "0.002");
    CHECK(run_command("discover", changed, dir, log, err) == pipeline::kMissingUpstream);

    // Corrupting a payload is caught by verify.
    auto text = test::read_file(dir / "fermat.json");
    const auto pos = text.find("\"loss\"");
    REQUIRE(pos != std::string::npos);
    text.insert(pos, "\"tampered\":1,");
    std::ofstream(dir / "fermat.json") << text;
    CHECK(run_command("verify", cfg, dir, log, err) == pipeline::kCheckFailed);
  }

  TEST_CASE("option-count sweep row 0 is the flat baseline") {
    const auto dir = test::temp_dir("harness-sweep");
    const auto cfg = tiny();
    std::ostringstream log, err;
    for (const char* c : {"collect", "train-metric", "train-fermat", "discover", "train-options", "sweep-options"})
      REQUIRE(pipeline::run_command(c, cfg, dir, log, err) == pipeline::kOk);
    std::ifstream in(dir / "sweep.json");
    const auto j = nlohmann::json::parse(in);
    const auto& row0 = j.at("report").at("rows").at(0);
    REQUIRE(row0.at("count") == 0);
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      auto dc = cfg.downstream;
      dc.seed = derive_seed(cfg.seed, "replicate/" + std::to_string(cfg.seeds[i]));
      CHECK(row0.at("finals").at(i).get<double>() == macdec::train_flat_iql(cfg.grid, dc).final_fraction());
    }
  }
}

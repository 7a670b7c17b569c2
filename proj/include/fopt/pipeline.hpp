#pragma once

// Pipeline stages over an output directory. Each stage writes one artifact
// that embeds its config hash, its payload hash and the payload hash of the
// artifact it was built from; loading checks all three.

#include <filesystem>
#include <memory>
#include <ostream>

#include "fopt/config.hpp"
#include "fopt/oracles.hpp"
#include "fopt/stats.hpp"

namespace fopt::pipeline {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kInvalid = 2, kMissingUpstream = 3 };

struct Layout {
  fs::path dir;
  fs::path dataset() const { return dir / "dataset.bin"; }
  fs::path artifact(config::Stage s) const;
  fs::path option_rollouts() const { return dir / "option_rollouts.jsonl"; }
  fs::path transcript() const { return dir / "transcript.jsonl"; }
  fs::path curves(const std::string& method) const { return dir / ("curves_" + method + ".csv"); }
  fs::path sweep_csv() const { return dir / "sweep.csv"; }
  fs::path sweep_json() const { return dir / "sweep.json"; }
  fs::path plots() const { return dir / "plots"; }
};

/// Artifact envelope around a JSON payload.
nlohmann::json envelope(config::Stage s, const config::PipelineConfig& cfg, const nlohmann::json& payload,
                        const std::string& upstream_content);
std::string content_hash(const nlohmann::json& payload);

/// Loads trained components on demand; every load checks hashes against the
/// current config and throws UpstreamError naming the stage to rerun.
class Workspace {
 public:
  Workspace(config::PipelineConfig cfg, fs::path out, std::ostream& log);
  ~Workspace();

  const config::PipelineConfig& cfg() const { return cfg_; }
  const Layout& layout() const { return layout_; }
  std::ostream& log() { return log_; }

  const data::TransitionDataset& dataset();
  const metric::LearnedDistance& distance();
  const fermat::FermatEncoder& encoder();
  const fermat::RelativeAbstraction& abstraction();
  const spectral::SpectralBasis& basis();
  const options::OptionKeyer& keyer();
  const std::vector<options::JointOption>& options();

  /// Payload hash of the artifact currently on disk for a stage.
  std::string stored_content(config::Stage s);
  /// Verified payload of a stage's artifact.
  nlohmann::json payload(config::Stage s);

 private:
  nlohmann::json load(config::Stage s);
  config::PipelineConfig cfg_;
  Layout layout_;
  std::ostream& log_;
  struct Cache;
  std::unique_ptr<Cache> cache_;
};

void collect(Workspace& ws);
void train_metric(Workspace& ws);
void train_fermat(Workspace& ws);
void discover(Workspace& ws);
void train_options(Workspace& ws);

struct MethodScores {
  std::string name;
  std::vector<double> finals;  // per seed, final fraction of apples eaten
  stats::Interval ci;
};

struct EvaluateReport {
  std::vector<int> seeds;
  MethodScores flat;
  MethodScores options;
  int n_options = 0;
  /// Options IQM above flat with non-overlapping intervals.
  bool separated() const { return options.ci.lo > flat.ci.hi; }
  nlohmann::json to_json() const;
};

/// Flat IQL against IQL plus the whole option set, one run per seed each.
EvaluateReport evaluate(Workspace& ws);

struct SweepReport {
  std::vector<int> counts;
  std::vector<MethodScores> rows;
  /// The largest count scores below some smaller count.
  bool saturation_flag = false;
  nlohmann::json to_json() const;
};

/// Options taken in eigen order (+e1, -e1, +e2, ...), first `count` of them.
SweepReport sweep_options(Workspace& ws);

struct PlotReport {
  std::vector<fs::path> files;
  /// Per k = 1..3: min over conditioning-group pairs of field_difference.
  std::vector<double> relative_min_diff;
  std::vector<double> raw_min_diff;
  /// Per k = 1..3: mean difference between relative and raw fields.
  std::vector<double> relative_vs_raw;
};

/// Eigenvector heatmaps (relative and raw-joint) per conditioning group and
/// learning curves when evaluate has run.
PlotReport plot(Workspace& ws);

/// Re-derives every artifact hash present in the directory, then runs the
/// oracle suite plus model checks on whatever artifacts exist.
std::vector<oracles::Check> verify(Workspace& ws);

/// One CLI command end to end, with exit-code mapping.
int run_command(const std::string& command, const config::PipelineConfig& cfg, const fs::path& out,
                std::ostream& log, std::ostream& err);

/// Scores from a fixed set of seeds: IQM and bootstrap interval.
MethodScores summarise(std::string name, std::vector<double> finals, int resamples, std::uint64_t seed);

}  // namespace fopt::pipeline

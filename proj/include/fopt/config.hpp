#pragma once

// Pipeline configuration: one flat set of dotted `key = value` entries,
// named presets and per-stage hashes.
//
// File format (see docs/formats.md): one `key = value` per line, `#` starts
// a comment, blank lines are ignored, unknown keys are errors. A file may
// start from a preset with `preset = NAME`.

#include <iosfwd>
#include <string>
#include <vector>

#include "fopt/cmi.hpp"
#include "fopt/fermat.hpp"
#include "fopt/macdec.hpp"
#include "fopt/metric.hpp"
#include "fopt/options.hpp"

namespace fopt::config {

enum class Stage { kCollect, kMetric, kFermat, kDiscover, kOptions, kEvaluate };
const char* stage_name(Stage s);
/// CLI name of the command that produces a stage's artifact.
const char* stage_command(Stage s);

struct PipelineConfig {
  std::string preset = "custom";
  grid::GridSpec grid;
  long transitions = 50000;

  metric::MetricConfig metric;
  bool cmi_enabled = true;
  cmi::CmiConfig cmi;
  fermat::FermatConfig fermat;

  double grain = 1.0;
  bool scalar = false;
  long min_visits = 1;
  bool count_weighted = false;
  int k = 5;  // non-trivial eigenvectors; 2k options

  options::OptionConfig options;
  macdec::DownstreamConfig downstream;

  std::vector<int> seeds = {0, 1, 2, 3, 4};
  std::vector<int> sweep_counts = {0, 2, 4, 10};
  int bootstrap = 2000;

  /// Pinned cells of agents 0..N-2 per plot; the last agent is free.
  std::vector<std::vector<grid::Cell>> conditioning;
  /// Node cap of the raw-joint comparison graph.
  int raw_probe_nodes = 2000;

  std::uint64_t seed = 0;  // root seed, from --seed
};

/// Named presets: empty-7x7, forage-7x7, figure-15x15, responsive-15x15,
/// hetero-2ag, hetero-3ag. Throws ConfigError for unknown names.
PipelineConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Sets one entry. Throws ConfigError on an unknown key or a malformed value.
void set_value(PipelineConfig& cfg, const std::string& key, const std::string& value);

/// Parses a config file body on top of `base`.
PipelineConfig parse(std::istream& in, PipelineConfig base = {});
/// `preset:NAME` or a file path.
PipelineConfig load(const std::string& spec);

/// Sets the root seed and the sub-config seeds derived from it.
void set_seed(PipelineConfig& cfg, std::uint64_t seed);

/// Canonical `key = value` lines in a fixed order (re-parsable).
std::vector<std::pair<std::string, std::string>> entries(const PipelineConfig& cfg);
std::string dump(const PipelineConfig& cfg);

/// Chained hash: a stage's hash covers its own keys, the root seed and the
/// hash of the stage before it.
std::string stage_hash(const PipelineConfig& cfg, Stage s);

/// Checks cross-field invariants (grid, counts, ranges). Throws ConfigError.
void validate(const PipelineConfig& cfg);

}  // namespace fopt::config

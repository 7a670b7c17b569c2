#include "fopt/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

namespace fopt::config {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kCollect: return "collect";
    case Stage::kMetric: return "metric";
    case Stage::kFermat: return "fermat";
    case Stage::kDiscover: return "discover";
    case Stage::kOptions: return "options";
    case Stage::kEvaluate: return "evaluate";
  }
  return "?";
}

const char* stage_command(Stage s) {
  switch (s) {
    case Stage::kCollect: return "collect";
    case Stage::kMetric: return "train-metric";
    case Stage::kFermat: return "train-fermat";
    case Stage::kDiscover: return "discover";
    case Stage::kOptions: return "train-options";
    case Stage::kEvaluate: return "evaluate";
  }
  return "?";
}

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    auto t = trim(cur);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

long parse_long(const std::string& key, const std::string& v) {
  long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<int> parse_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& part : split(v, ',')) {
    auto dash = part.find('-', 1);
    if (dash != std::string::npos) {
      long lo = parse_long(key, trim(part.substr(0, dash)));
      long hi = parse_long(key, trim(part.substr(dash + 1)));
      if (hi < lo) throw ConfigError(key + ": empty range '" + part + "'");
      for (long i = lo; i <= hi; ++i) out.push_back(static_cast<int>(i));
    } else {
      out.push_back(static_cast<int>(parse_long(key, part)));
    }
  }
  return out;
}

grid::Cell parse_cell(const std::string& key, const std::string& v) {
  auto xy = split(v, ',');
  if (xy.size() != 2) throw ConfigError(key + ": expected 'x,y', got '" + v + "'");
  return {static_cast<int>(parse_long(key, xy[0])), static_cast<int>(parse_long(key, xy[1]))};
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt_cell(grid::Cell c) { return std::to_string(c.x) + "," + std::to_string(c.y); }

struct Entry {
  std::string key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

#define FOPT_LONG(K, F)                                                                     \
  Entry {                                                                                    \
    K, [](const PipelineConfig& c) { return std::to_string(c.F); },                         \
        [](PipelineConfig& c, const std::string& v) { c.F = static_cast<decltype(c.F)>(parse_long(K, v)); } \
  }
#define FOPT_DOUBLE(K, F)                                                          \
  Entry {                                                                          \
    K, [](const PipelineConfig& c) { return fmt(c.F); },                           \
        [](PipelineConfig& c, const std::string& v) { c.F = parse_double(K, v); } \
  }
#define FOPT_BOOL(K, F)                                                                        \
  Entry {                                                                                      \
    K, [](const PipelineConfig& c) { return std::string(c.F ? "true" : "false"); },            \
        [](PipelineConfig& c, const std::string& v) { c.F = parse_bool(K, v); }               \
  }
#define FOPT_INTS(K, F)                                                           \
  Entry {                                                                         \
    K, [](const PipelineConfig& c) { return fmt_ints(c.F); },                     \
        [](PipelineConfig& c, const std::string& v) { c.F = parse_ints(K, v); } \
  }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> r = {
      FOPT_LONG("grid.width", grid.width),
      FOPT_LONG("grid.height", grid.height),
      FOPT_LONG("grid.agents", grid.n_agents),
      Entry{"grid.types",
            [](const PipelineConfig& c) {
              std::vector<int> t;
              for (auto a : c.grid.agent_types) t.push_back(static_cast<int>(a));
              return fmt_ints(t);
            },
            [](PipelineConfig& c, const std::string& v) {
              c.grid.agent_types.clear();
              for (int t : parse_ints("grid.types", v)) {
                if (t != 1 && t != 2) throw ConfigError("grid.types: agent types are 1 or 2");
                c.grid.agent_types.push_back(static_cast<grid::AgentType>(t));
              }
            }},
      FOPT_INTS("grid.levels", grid.agent_levels),
      Entry{"grid.apples",
            [](const PipelineConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.grid.apples.size(); ++i) {
                const auto& a = c.grid.apples[i];
                s += (i ? "; " : "") + fmt_cell(a.cell) + "," + std::to_string(a.level);
              }
              return s;
            },
            [](PipelineConfig& c, const std::string& v) {
              c.grid.apples.clear();
              for (const auto& part : split(v, ';')) {
                auto f = split(part, ',');
                if (f.size() != 3) throw ConfigError("grid.apples: expected 'x,y,level' entries");
                c.grid.apples.push_back({{static_cast<int>(parse_long("grid.apples", f[0])),
                                          static_cast<int>(parse_long("grid.apples", f[1]))},
                                         static_cast<int>(parse_long("grid.apples", f[2]))});
              }
            }},
      FOPT_BOOL("grid.forced_coop", grid.forced_coop),
      Entry{"grid.walls",
            [](const PipelineConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.grid.walls.size(); ++i) s += (i ? "; " : "") + fmt_cell(c.grid.walls[i]);
              return s;
            },
            [](PipelineConfig& c, const std::string& v) {
              c.grid.walls.clear();
              for (const auto& part : split(v, ';')) c.grid.walls.push_back(parse_cell("grid.walls", part));
            }},
      FOPT_LONG("grid.horizon", grid.horizon),
      FOPT_LONG("dataset.transitions", transitions),

      FOPT_INTS("metric.hidden", metric.hidden),
      FOPT_LONG("metric.dim_per_feature", metric.dim_per_feature),
      FOPT_DOUBLE("metric.lr", metric.lr),
      FOPT_LONG("metric.batch", metric.batch),
      FOPT_LONG("metric.iterations", metric.iterations),
      FOPT_DOUBLE("metric.horizon_mean", metric.horizon_mean),
      FOPT_DOUBLE("metric.temperature", metric.temperature),
      FOPT_INTS("metric.omit_features", metric.omit_features),
      FOPT_BOOL("cmi.enabled", cmi_enabled),
      FOPT_DOUBLE("cmi.weight", cmi.weight),
      FOPT_DOUBLE("cmi.lr", cmi.lr),
      FOPT_INTS("cmi.hidden", cmi.hidden),
      FOPT_LONG("cmi.knn", cmi.knn),
      FOPT_LONG("cmi.timesteps", cmi.timesteps),

      FOPT_INTS("fermat.hidden", fermat.hidden),
      FOPT_DOUBLE("fermat.lr", fermat.lr),
      FOPT_LONG("fermat.batch", fermat.batch),
      FOPT_LONG("fermat.iterations", fermat.iterations),
      FOPT_DOUBLE("fermat.power", fermat.power),
      FOPT_BOOL("fermat.permute", fermat.permute),

      FOPT_DOUBLE("discover.grain", grain),
      FOPT_BOOL("discover.scalar", scalar),
      FOPT_LONG("discover.min_visits", min_visits),
      FOPT_BOOL("discover.count_weighted", count_weighted),
      FOPT_LONG("discover.k", k),

      FOPT_LONG("options.steps", options.steps),
      FOPT_DOUBLE("options.alpha", options.alpha),
      FOPT_DOUBLE("options.gamma", options.gamma),
      FOPT_DOUBLE("options.eps_start", options.eps_start),
      FOPT_DOUBLE("options.eps_end", options.eps_end),
      FOPT_DOUBLE("options.eps_decay_fraction", options.eps_decay_fraction),
      FOPT_LONG("options.step_cap", options.step_cap),
      Entry{"options.key_mode", [](const PipelineConfig& c) { return std::string(options::key_mode_name(c.options.mode)); },
            [](PipelineConfig& c, const std::string& v) { c.options.mode = options::key_mode_from_name(v); }},
      FOPT_LONG("options.offset_clip", options.offset_clip),

      FOPT_LONG("downstream.steps", downstream.steps),
      FOPT_DOUBLE("downstream.alpha", downstream.alpha),
      FOPT_DOUBLE("downstream.gamma", downstream.gamma),
      FOPT_DOUBLE("downstream.eps_start", downstream.eps_start),
      FOPT_DOUBLE("downstream.eps_end", downstream.eps_end),
      FOPT_DOUBLE("downstream.eps_decay_fraction", downstream.eps_decay_fraction),
      FOPT_DOUBLE("downstream.eps_eval", downstream.eps_eval),
      FOPT_LONG("downstream.checkpoints", downstream.checkpoints),
      FOPT_LONG("downstream.eval_episodes", downstream.eval_episodes),
      FOPT_BOOL("downstream.interruption", downstream.interruption),
      FOPT_BOOL("downstream.intra_option", downstream.intra_option),
      FOPT_BOOL("downstream.primitive_updates", downstream.primitive_updates),
      FOPT_DOUBLE("downstream.q_init", downstream.q_init),

      FOPT_INTS("experiment.seeds", seeds),
      FOPT_INTS("experiment.sweep_counts", sweep_counts),
      FOPT_LONG("experiment.bootstrap", bootstrap),

      Entry{"plot.conditioning",
            [](const PipelineConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.conditioning.size(); ++i) {
                s += i ? "; " : "";
                for (std::size_t j = 0; j < c.conditioning[i].size(); ++j)
                  s += (j ? " " : "") + fmt_cell(c.conditioning[i][j]);
              }
              return s;
            },
            [](PipelineConfig& c, const std::string& v) {
              c.conditioning.clear();
              for (const auto& group : split(v, ';')) {
                std::vector<grid::Cell> cells;
                for (const auto& cell : split(group, ' ')) cells.push_back(parse_cell("plot.conditioning", cell));
                c.conditioning.push_back(cells);
              }
            }},
      FOPT_LONG("plot.raw_probe_nodes", raw_probe_nodes),
  };
  return r;
}

#undef FOPT_LONG
#undef FOPT_DOUBLE
#undef FOPT_BOOL
#undef FOPT_INTS

}  // namespace

PipelineConfig preset(const std::string& name) {
  PipelineConfig c;
  c.preset = name;
  c.downstream.q_init = 0.05;
  c.options.offset_clip = 1;
  if (name == "empty-7x7") {
    c.grid.width = c.grid.height = 7;
    c.grid.n_agents = 3;
    c.conditioning = {{{1, 1}, {1, 5}}, {{3, 3}, {3, 4}}, {{1, 3}, {5, 3}}};
  } else if (name == "forage-7x7") {
    c.grid.width = c.grid.height = 7;
    c.grid.n_agents = 3;
    c.grid.apples = {{{2, 4}, 1}, {{4, 2}, 1}};
    grid::make_forced_coop(c.grid);
    c.metric.iterations = 3000;
    c.downstream.steps = 3000000;
    c.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    c.sweep_counts = {0, 2, 4, 10};
    c.conditioning = {{{1, 1}, {1, 5}}};
  } else if (name == "figure-15x15" || name == "responsive-15x15") {
    c.grid.width = c.grid.height = 15;
    c.grid.n_agents = name == "figure-15x15" ? 4 : 3;
    c.transitions = 500000;
    c.min_visits = 20;
    c.k = 3;
    c.options.steps = 5000000;
    // The last agent is free; the 4-agent preset pins a third teammate.
    if (c.grid.n_agents == 3)
      c.conditioning = {{{1, 4}, {1, 7}}, {{7, 7}, {7, 8}}, {{7, 13}, {13, 7}}};
    else
      c.conditioning = {{{1, 4}, {1, 7}, {10, 10}}};
  } else if (name == "hetero-2ag") {
    c.grid.width = c.grid.height = 10;
    c.grid.n_agents = 2;
    c.grid.agent_types = {grid::AgentType::kRowOnly, grid::AgentType::kFull};
    c.transitions = 100000;
    c.k = 3;
    c.options.steps = 1000000;
    c.conditioning = {{{5, 0}}};
  } else if (name == "hetero-3ag") {
    c.grid.width = c.grid.height = 15;
    c.grid.n_agents = 3;
    c.grid.agent_types = {grid::AgentType::kRowOnly, grid::AgentType::kFull, grid::AgentType::kFull};
    c.transitions = 300000;
    c.k = 3;
    c.options.steps = 2000000;
    c.conditioning = {{{7, 0}, {3, 3}}};
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  if (c.k < 5) c.sweep_counts = {0, 2, 2 * c.k};
  return c;
}

std::vector<std::string> preset_names() {
  return {"empty-7x7", "forage-7x7", "figure-15x15", "responsive-15x15", "hetero-2ag", "hetero-3ag"};
}

void set_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& e : registry()) {
    if (e.key == key) {
      e.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

PipelineConfig parse(std::istream& in, PipelineConfig base) {
  std::string line;
  int lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto t = trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    auto key = trim(t.substr(0, eq));
    auto value = trim(t.substr(eq + 1));
    if (key == "preset") {
      if (!first) throw ConfigError("line " + std::to_string(lineno) + ": preset must come first");
      base = preset(value);
    } else {
      try {
        set_value(base, key, value);
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    first = false;
  }
  return base;
}

PipelineConfig load(const std::string& spec) {
  PipelineConfig c;
  if (spec.rfind("preset:", 0) == 0) {
    c = preset(spec.substr(7));
  } else {
    std::ifstream in(spec);
    if (!in) throw ConfigError("cannot open config '" + spec + "'");
    c = parse(in);
  }
  validate(c);
  return c;
}

void set_seed(PipelineConfig& cfg, std::uint64_t seed) {
  // Every module draws from its own named streams under the root seed.
  cfg.seed = seed;
  cfg.grid.seed = seed;
  cfg.metric.seed = seed;
  cfg.cmi.seed = seed;
  cfg.fermat.seed = seed;
  cfg.options.seed = seed;
  cfg.downstream.seed = seed;
}

std::vector<std::pair<std::string, std::string>> entries(const PipelineConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : registry()) out.emplace_back(e.key, e.get(cfg));
  return out;
}

std::string dump(const PipelineConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : entries(cfg)) s += k + " = " + v + "\n";
  return s;
}

std::string stage_hash(const PipelineConfig& cfg, Stage s) {
  static const std::vector<std::vector<std::string>> prefixes = {
      {"grid.", "dataset."}, {"metric.", "cmi."}, {"fermat."}, {"discover."}, {"options."}, {"downstream.", "experiment."}};
  std::string text = "seed = " + std::to_string(cfg.seed) + "\n";
  for (int i = 0; i <= static_cast<int>(s); ++i) {
    text += std::string("[") + stage_name(static_cast<Stage>(i)) + "]\n";
    for (const auto& [k, v] : entries(cfg)) {
      for (const auto& p : prefixes[i]) {
        if (k.rfind(p, 0) == 0) text += k + " = " + v + "\n";
      }
    }
  }
  return hex64(fnv1a64(text));
}

void validate(const PipelineConfig& cfg) {
  cfg.grid.validate();
  if (cfg.transitions <= 0) throw ConfigError("dataset.transitions must be positive");
  if (cfg.k < 1) throw ConfigError("discover.k must be at least 1");
  if (cfg.grain <= 0) throw ConfigError("discover.grain must be positive");
  if (cfg.min_visits < 1) throw ConfigError("discover.min_visits must be at least 1");
  if (cfg.options.steps <= 0 || cfg.downstream.steps <= 0) throw ConfigError("step budgets must be positive");
  if (cfg.seeds.empty()) throw ConfigError("experiment.seeds is empty");
  if (cfg.bootstrap < 1000) throw ConfigError("experiment.bootstrap must be at least 1000");
  if (cfg.downstream.checkpoints < 1) throw ConfigError("downstream.checkpoints must be at least 1");
  for (int n : cfg.sweep_counts) {
    if (n < 0 || n > 2 * cfg.k) throw ConfigError("experiment.sweep_counts entries must lie in [0, 2k]");
  }
  for (const auto& pins : cfg.conditioning) {
    if (static_cast<int>(pins.size()) != cfg.grid.n_agents - 1)
      throw ConfigError("plot.conditioning: each group pins N-1 agents");
    for (auto c : pins) {
      if (!cfg.grid.in_bounds(c)) throw ConfigError("plot.conditioning: cell out of bounds");
    }
  }
}

}  // namespace fopt::config

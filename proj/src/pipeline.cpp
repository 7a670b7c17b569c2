#include "fopt/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>

#include "fopt/plot.hpp"

namespace fopt::pipeline {

using config::Stage;
using nlohmann::json;

fs::path Layout::artifact(Stage s) const { return dir / (std::string(config::stage_name(s)) + ".json"); }

std::string content_hash(const json& payload) { return hex64(fnv1a64(payload.dump())); }

namespace {

// Named random streams each stage draws from, recorded in its artifact.
json streams_of(Stage s) {
  switch (s) {
    case Stage::kCollect: return {"dataset/episode/<e>"};
    case Stage::kMetric: return {"metric/batches", "metric/init", "cmi/batches", "cmi/knn", "cmi/init"};
    case Stage::kFermat: return {"fermat/batches", "fermat/init"};
    case Stage::kDiscover: return json::array();
    case Stage::kOptions: return {"option/<id>/explore", "option/<id>/reset/<ep>"};
    case Stage::kEvaluate: return {"replicate/<seed>", "downstream/explore", "downstream/reset/<ep>", "downstream/eval"};
  }
  return json::array();
}

void write_json(const fs::path& p, const json& j) { plot::write_text(p, j.dump(1) + "\n"); }

Stage previous(Stage s) { return static_cast<Stage>(static_cast<int>(s) - 1); }

json state_json(const grid::JointState& s) {
  json cells = json::array();
  for (auto c : s.cells) cells.push_back({c.x, c.y});
  return {{"cells", cells}, {"apples", s.apples}, {"step", s.step}};
}

grid::JointState state_from_json(const json& j) {
  grid::JointState s;
  for (const auto& c : j.at("cells")) s.cells.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
  s.apples = j.at("apples");
  s.step = j.at("step");
  return s;
}

macdec::OptionLibrary library(Workspace& ws, int count) {
  macdec::OptionLibrary lib;
  lib.keyer = &ws.keyer();
  const auto& all = ws.options();
  lib.options.assign(all.begin(), all.begin() + std::min<std::size_t>(count, all.size()));
  return lib;
}

macdec::DownstreamConfig replicate(const config::PipelineConfig& cfg, int seed) {
  auto dc = cfg.downstream;
  dc.seed = derive_seed(cfg.seed, "replicate/" + std::to_string(seed));
  return dc;
}

json scores_json(const MethodScores& m) {
  return {{"name", m.name}, {"finals", m.finals}, {"iqm", m.ci.point}, {"ci_lo", m.ci.lo}, {"ci_hi", m.ci.hi}};
}

}  // namespace

json envelope(Stage s, const config::PipelineConfig& cfg, const json& payload, const std::string& upstream_content) {
  return {{"format", "fopt-artifact"},
          {"version", 1},
          {"stage", config::stage_name(s)},
          {"config_hash", config::stage_hash(cfg, s)},
          {"content_hash", content_hash(payload)},
          {"upstream_content", upstream_content},
          {"root_seed", cfg.seed},
          {"streams", streams_of(s)},
          {"payload", payload}};
}

// ---------------------------------------------------------------------------
// Workspace

struct Workspace::Cache {
  std::optional<data::TransitionDataset> ds;
  std::optional<metric::LearnedDistance> d;
  std::optional<fermat::FermatEncoder> phi;
  std::unique_ptr<fermat::RelativeAbstraction> abs;
  std::optional<spectral::SpectralBasis> basis;
  std::unique_ptr<options::OptionKeyer> keyer;
  std::optional<std::vector<options::JointOption>> options;
  std::map<Stage, json> artifacts;
};

Workspace::Workspace(config::PipelineConfig cfg, fs::path out, std::ostream& log)
    : cfg_(std::move(cfg)), layout_{std::move(out)}, log_(log), cache_(std::make_unique<Cache>()) {
  config::validate(cfg_);
}

Workspace::~Workspace() = default;

json Workspace::load(Stage s) {
  if (auto it = cache_->artifacts.find(s); it != cache_->artifacts.end()) return it->second;
  // Upstream first, so the error names the earliest stage that needs a rerun.
  const std::string upstream = s == Stage::kCollect ? "" : stored_content(previous(s));
  const auto path = layout_.artifact(s);
  const std::string cmd = config::stage_command(s);
  if (!fs::exists(path)) throw UpstreamError(cmd, "missing artifact " + path.string());
  json j;
  try {
    std::ifstream in(path);
    in >> j;
  } catch (const std::exception& e) {
    throw UpstreamError(cmd, "unreadable artifact " + path.string() + ": " + e.what());
  }
  if (j.value("config_hash", "") != config::stage_hash(cfg_, s))
    throw UpstreamError(cmd, "stale artifact " + path.string() + ": config hash differs from the current config");
  if (j.value("content_hash", "") != content_hash(j.at("payload")))
    throw UpstreamError(cmd, "corrupt artifact " + path.string() + ": payload hash mismatch");
  if (j.value("upstream_content", "") != upstream)
    throw UpstreamError(cmd, "stale artifact " + path.string() + ": built from a different upstream artifact");
  cache_->artifacts[s] = j;
  return j;
}

std::string Workspace::stored_content(Stage s) { return load(s).at("content_hash"); }

json Workspace::payload(Stage s) { return load(s).at("payload"); }

const data::TransitionDataset& Workspace::dataset() {
  if (!cache_->ds) {
    const json j = load(Stage::kCollect);
    if (!fs::exists(layout_.dataset())) throw UpstreamError("collect", "missing " + layout_.dataset().string());
    auto ds = data::load_dataset(layout_.dataset());
    if (ds.config_hash != config::stage_hash(cfg_, Stage::kCollect) ||
        hex64(data::dataset_hash(ds)) != j.at("payload").at("dataset_hash"))
      throw UpstreamError("collect", "dataset file does not match its artifact");
    cache_->ds = std::move(ds);
  }
  return *cache_->ds;
}

const metric::LearnedDistance& Workspace::distance() {
  if (!cache_->d) cache_->d = metric::LearnedDistance::from_json(load(Stage::kMetric).at("payload").at("distance"));
  return *cache_->d;
}

const fermat::FermatEncoder& Workspace::encoder() {
  if (!cache_->phi) cache_->phi = fermat::FermatEncoder::from_json(load(Stage::kFermat).at("payload").at("encoder"));
  return *cache_->phi;
}

const fermat::RelativeAbstraction& Workspace::abstraction() {
  if (!cache_->abs)
    cache_->abs = std::make_unique<fermat::RelativeAbstraction>(cfg_.grid, encoder(), distance(), cfg_.grain, cfg_.scalar);
  return *cache_->abs;
}

const spectral::SpectralBasis& Workspace::basis() {
  if (!cache_->basis) cache_->basis = spectral::SpectralBasis::from_json(load(Stage::kDiscover).at("payload").at("basis"));
  return *cache_->basis;
}

const options::OptionKeyer& Workspace::keyer() {
  if (!cache_->keyer)
    cache_->keyer = std::make_unique<options::OptionKeyer>(cfg_.grid, cfg_.options.mode, &abstraction(),
                                                           cfg_.options.offset_clip);
  return *cache_->keyer;
}

const std::vector<options::JointOption>& Workspace::options() {
  if (!cache_->options) {
    std::vector<options::JointOption> out;
    const json j = load(Stage::kOptions);
    for (const auto& o : j.at("payload").at("options")) out.push_back(options::JointOption::from_json(o));
    cache_->options = std::move(out);
  }
  return *cache_->options;
}

// ---------------------------------------------------------------------------
// Stages

void collect(Workspace& ws) {
  const auto& cfg = ws.cfg();
  auto ds = data::collect_dataset(cfg.grid, {}, static_cast<std::size_t>(cfg.transitions), cfg.seed);
  ds.config_hash = config::stage_hash(cfg, Stage::kCollect);
  fs::create_directories(ws.layout().dir);
  data::save_dataset(ds, ws.layout().dataset());
  const std::string h = hex64(data::dataset_hash(ds));
  json payload = {{"dataset_hash", h}, {"transitions", ds.size()}, {"episodes", ds.episodes().size()},
                  {"grid", grid::to_json(cfg.grid)}};
  write_json(ws.layout().artifact(Stage::kCollect), envelope(Stage::kCollect, cfg, payload, ""));
  ws.log() << "collect: " << ds.size() << " transitions, dataset hash " << h << "\n";
}

void train_metric(Workspace& ws) {
  const auto& cfg = ws.cfg();
  const auto& ds = ws.dataset();
  metric::TrainingLog log;
  cmi::CmiDiagnostics diag;
  auto d = metric::train_learned_distance(ds, cfg.metric, cfg.cmi_enabled ? &cfg.cmi : nullptr, &log, &diag);
  cmi::feature_correlations(d, cfg.grid, grid::AgentType::kFull, diag);
  const auto rep = cmi::assess_disentanglement(diag);
  json payload = {{"distance", d.to_json()},
                  {"log", {{"iteration", log.iteration}, {"loss", log.loss}}},
                  {"disentanglement",
                   {{"feature_corr", diag.feature_corr},
                    {"channel_corr", diag.channel_corr},
                    {"own_dominates", rep.own_dominates},
                    {"max_channel_corr", rep.max_channel_corr}}}};
  write_json(ws.layout().artifact(Stage::kMetric),
             envelope(Stage::kMetric, cfg, payload, ws.stored_content(Stage::kCollect)));
  if (!diag.rows.empty()) diag.write_csv(ws.layout().dir / "cmi_diagnostics.csv");
  ws.log() << "train-metric: final loss " << (log.loss.empty() ? 0.0 : log.loss.back()) << ", own-feature dominance "
           << (rep.own_dominates ? "yes" : "no") << ", max channel corr " << rep.max_channel_corr << "\n";
}

void train_fermat(Workspace& ws) {
  const auto& cfg = ws.cfg();
  fermat::FermatLog log;
  auto phi = fermat::train_fermat_encoder(ws.dataset(), ws.distance(), cfg.fermat, &log);
  json payload = {{"encoder", phi.to_json()}, {"log", {{"iteration", log.iteration}, {"loss", log.loss}}}};
  write_json(ws.layout().artifact(Stage::kFermat),
             envelope(Stage::kFermat, cfg, payload, ws.stored_content(Stage::kMetric)));
  ws.log() << "train-fermat: final loss " << (log.loss.empty() ? 0.0 : log.loss.back()) << "\n";
}

void discover(Workspace& ws) {
  const auto& cfg = ws.cfg();
  const auto g = spectral::build_graph(ws.dataset(), ws.abstraction(), cfg.count_weighted, 0, cfg.min_visits);
  const auto b = spectral::eigendecompose(g, cfg.k);
  const auto chk = spectral::check_basis(spectral::restricted_laplacian(g, b), b.eigenvalues, b.eigenvectors);
  json payload = {{"basis", b.to_json()},
                  {"graph", {{"nodes", g.size()}, {"edges", g.edge_count()}, {"dropped_nodes", b.dropped_nodes}}},
                  {"check",
                   {{"residual", chk.residual},
                    {"orthonormality", chk.orthonormality},
                    {"ascending", chk.ascending},
                    {"trivial", chk.trivial}}}};
  write_json(ws.layout().artifact(Stage::kDiscover),
             envelope(Stage::kDiscover, cfg, payload, ws.stored_content(Stage::kFermat)));
  ws.log() << "discover: " << g.size() << " nodes, " << g.edge_count() << " edges, lambda";
  for (int k = 0; k <= cfg.k; ++k) ws.log() << " " << b.eigenvalues(k);
  ws.log() << ", residual " << chk.residual << "\n";
}

void train_options(Workspace& ws) {
  const auto& cfg = ws.cfg();
  const auto& b = ws.basis();
  const auto& abs = ws.abstraction();
  const auto& keyer = ws.keyer();
  json opts = json::array(), summary = json::array();
  std::ofstream rollouts(ws.layout().option_rollouts());
  for (int k = 1; k <= cfg.k; ++k) {
    for (int sign : {1, -1}) {
      const int id = options::option_id(k, sign);
      options::IntrinsicRewardSpec rs{&b, &abs, k, sign};
      auto o = options::train_option(cfg.grid, rs, keyer, cfg.options, id);
      o.config_hash = config::stage_hash(cfg, Stage::kOptions);
      std::array<double, grid::kNumFeatures> off{}, spread{};
      const int n = 20;
      for (int r = 0; r < n; ++r) {
        const auto s0 = grid::reset(cfg.grid, derive_seed(cfg.seed, "option-log/" + std::to_string(id) + "/" + std::to_string(r)));
        const auto ro = options::rollout_option(o, keyer, cfg.grid, s0, &rs);
        const auto fo = options::fermat_offsets(cfg.grid, ro.states.back(), abs.representation(ro.states.back()).fermat);
        const auto sp = options::feature_spread(cfg.grid, ro.states.back());
        json states = json::array();
        for (const auto& s : ro.states) states.push_back(state_json(s));
        rollouts << json{{"option", id}, {"k", k}, {"sign", sign}, {"termination", options::termination_name(ro.reason)},
                         {"states", states}, {"rewards", ro.rewards}}
                        .dump()
                 << "\n";
        for (int f = 0; f < grid::kNumFeatures; ++f) {
          off[f] += fo[f] / n;
          spread[f] += sp[f] / n;
        }
      }
      summary.push_back({{"option", id}, {"k", k}, {"sign", sign}, {"mean_fermat_offset", off}, {"mean_spread", spread}});
      ws.log() << "train-options: option " << id << " (k=" << k << (sign > 0 ? ", +" : ", -") << ") final offsets x "
               << off[0] << " y " << off[1] << "\n";
      opts.push_back(o.to_json());
    }
  }
  json payload = {{"options", opts}, {"rollout_summary", summary}};
  write_json(ws.layout().artifact(Stage::kOptions),
             envelope(Stage::kOptions, cfg, payload, ws.stored_content(Stage::kDiscover)));
}

MethodScores summarise(std::string name, std::vector<double> finals, int resamples, std::uint64_t seed) {
  MethodScores m;
  m.name = std::move(name);
  m.finals = std::move(finals);
  m.ci = stats::bootstrap_iqm(m.finals, resamples, 0.95, derive_seed(seed, "bootstrap/" + m.name));
  return m;
}

json EvaluateReport::to_json() const {
  return {{"seeds", seeds}, {"n_options", n_options}, {"flat", scores_json(flat)}, {"options", scores_json(options)},
          {"separated", separated()}};
}

EvaluateReport evaluate(Workspace& ws) {
  const auto& cfg = ws.cfg();
  const auto lib = library(ws, 2 * cfg.k);
  EvaluateReport rep;
  rep.seeds = cfg.seeds;
  rep.n_options = lib.size();
  std::ofstream flat_csv(ws.layout().curves("flat")), opt_csv(ws.layout().curves("options"));
  std::ofstream transcript(ws.layout().transcript());
  std::vector<double> flat, withopt;
  json curves = {{"flat", json::array()}, {"options", json::array()}};
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    const int s = cfg.seeds[i];
    const auto dc = replicate(cfg, s);
    const auto f = macdec::train_flat_iql(cfg.grid, dc);
    long logged = 0;
    macdec::RecordSink sink;
    if (i == 0) {
      sink = [&](const macdec::MacroRecord& r) {
        if (logged++ < 2000) transcript << macdec::record_to_json(r).dump() << "\n";
      };
    }
    const auto o = macdec::train_downstream(cfg.grid, lib, dc, sink);
    macdec::write_curve_csv(flat_csv, static_cast<std::uint64_t>(s), f.curve, i == 0);
    macdec::write_curve_csv(opt_csv, static_cast<std::uint64_t>(s), o.curve, i == 0);
    flat.push_back(f.final_fraction());
    withopt.push_back(o.final_fraction());
    json cf = json::array(), co = json::array();
    for (const auto& p : f.curve) cf.push_back({p.step, p.fraction});
    for (const auto& p : o.curve) co.push_back({p.step, p.fraction});
    curves["flat"].push_back(cf);
    curves["options"].push_back(co);
    ws.log() << "evaluate: seed " << s << " flat " << f.final_fraction() << " options " << o.final_fraction()
             << " (option starts " << o.option_starts << ")\n";
  }
  rep.flat = summarise("flat-iql", flat, cfg.bootstrap, cfg.seed);
  rep.options = summarise("iql+options", withopt, cfg.bootstrap, cfg.seed);
  json payload = rep.to_json();
  payload["curves"] = curves;
  write_json(ws.layout().artifact(Stage::kEvaluate),
             envelope(Stage::kEvaluate, cfg, payload, ws.stored_content(Stage::kOptions)));
  ws.log() << "evaluate: flat IQM " << rep.flat.ci.point << " [" << rep.flat.ci.lo << ", " << rep.flat.ci.hi
           << "], options IQM " << rep.options.ci.point << " [" << rep.options.ci.lo << ", " << rep.options.ci.hi
           << "]\n";
  return rep;
}

json SweepReport::to_json() const {
  json rows_j = json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto r = scores_json(rows[i]);
    r["count"] = counts[i];
    rows_j.push_back(r);
  }
  return {{"rows", rows_j}, {"saturation_flag", saturation_flag}};
}

SweepReport sweep_options(Workspace& ws) {
  const auto& cfg = ws.cfg();
  if (cfg.seeds.size() < 5) throw ConfigError("sweep-options needs at least 5 seeds");
  SweepReport rep;
  std::ofstream csv(ws.layout().sweep_csv());
  csv << "count,seed,fraction\n";
  for (int count : cfg.sweep_counts) {
    const auto lib = library(ws, count);
    std::vector<double> finals;
    for (int s : cfg.seeds) {
      const auto r = macdec::train_downstream(cfg.grid, lib, replicate(cfg, s));
      finals.push_back(r.final_fraction());
      csv << count << "," << s << "," << r.final_fraction() << "\n";
    }
    rep.counts.push_back(count);
    rep.rows.push_back(summarise("count-" + std::to_string(count), finals, cfg.bootstrap, cfg.seed));
    ws.log() << "sweep-options: count " << count << " IQM " << rep.rows.back().ci.point << "\n";
  }
  // Saturation: the largest count falls below some smaller count.
  std::size_t top = 0;
  for (std::size_t i = 1; i < rep.counts.size(); ++i) {
    if (rep.counts[i] > rep.counts[top]) top = i;
  }
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    if (rep.counts[i] < rep.counts[top] && rep.rows[i].ci.point > rep.rows[top].ci.point) rep.saturation_flag = true;
  }
  write_json(ws.layout().sweep_json(),
             {{"config_hash", config::stage_hash(cfg, Stage::kEvaluate)}, {"report", rep.to_json()}});
  std::vector<plot::Bar> bars;
  for (std::size_t i = 0; i < rep.rows.size(); ++i)
    bars.push_back({std::to_string(rep.counts[i]), rep.rows[i].ci.point, rep.rows[i].ci.lo, rep.rows[i].ci.hi});
  plot::write_text(ws.layout().plots() / "sweep.svg", plot::bars_svg(bars, "IQM apples eaten by option count", "fraction"));
  return rep;
}

PlotReport plot(Workspace& ws) {
  const auto& cfg = ws.cfg();
  PlotReport rep;
  const auto& b = ws.basis();
  const auto& abs = ws.abstraction();
  const int free_agent = cfg.grid.n_agents - 1;
  const int kmax = std::min(3, b.k_max);

  fermat::RawJointAbstraction raw;
  const auto rg = spectral::build_graph(ws.dataset(), raw, false, static_cast<std::size_t>(cfg.raw_probe_nodes));
  const auto rb = spectral::eigendecompose(rg, std::min(kmax, rg.size() - 1));
  ws.log() << "plot: raw-joint probe graph " << rg.size() << " nodes\n";

  std::vector<std::vector<std::vector<double>>> rel(cfg.conditioning.size()), rawf(cfg.conditioning.size());
  for (std::size_t g = 0; g < cfg.conditioning.size(); ++g) {
    const auto& pins = cfg.conditioning[g];
    for (int k = 0; k <= kmax; ++k) {
      auto emit = [&](const std::string& mode, const spectral::SpectralBasis& basis, const fermat::Abstraction& a) {
        auto field = spectral::eigenvector_field(basis, k, a, cfg.grid, pins, free_agent);
        std::string pinned_s;
        for (auto c : pins) pinned_s += " (" + std::to_string(c.x) + "," + std::to_string(c.y) + ")";
        const auto path = ws.layout().plots() / ("eig_" + mode + "_g" + std::to_string(g) + "_k" + std::to_string(k) + ".svg");
        plot::write_text(path, plot::heatmap_svg(field, cfg.grid.height, cfg.grid.width,
                                                 mode + " e" + std::to_string(k) + ", pinned" + pinned_s, pins));
        rep.files.push_back(path);
        return field;
      };
      rel[g].push_back(emit("relative", b, abs));
      rawf[g].push_back(k <= rb.k_max ? emit("raw", rb, raw) : std::vector<double>{});
    }
  }
  for (int k = 1; k <= kmax; ++k) {
    double rmin = INFINITY, wmin = INFINITY, cross = 0.0;
    for (std::size_t g = 0; g < rel.size(); ++g) {
      for (std::size_t h = g + 1; h < rel.size(); ++h) {
        rmin = std::min(rmin, spectral::field_difference(rel[g][k], rel[h][k]));
        if (!rawf[g][k].empty()) wmin = std::min(wmin, spectral::field_difference(rawf[g][k], rawf[h][k]));
      }
      if (!rawf[g][k].empty()) cross += spectral::field_difference(rel[g][k], rawf[g][k]) / rel.size();
    }
    rep.relative_min_diff.push_back(rmin);
    rep.raw_min_diff.push_back(wmin);
    rep.relative_vs_raw.push_back(cross);
    ws.log() << "plot: e" << k << " min pairwise difference relative " << rmin << " raw " << wmin
             << ", relative vs raw " << cross << "\n";
  }

  // Learning curves when evaluate has run.
  if (fs::exists(ws.layout().artifact(Stage::kEvaluate))) {
    json ev;
    try {
      ev = ws.payload(Stage::kEvaluate).at("curves");
    } catch (const Error&) {
      return rep;
    }
    std::vector<plot::Series> series;
    for (const char* method : {"flat", "options"}) {
      const auto& runs = ev.at(method);
      if (runs.empty()) continue;
      plot::Series s;
      s.label = method;
      for (std::size_t c = 0; c < runs[0].size(); ++c) {
        std::vector<double> vals;
        for (const auto& run : runs) vals.push_back(run[c][1]);
        const auto ci = stats::bootstrap_iqm(vals, cfg.bootstrap, 0.95, derive_seed(cfg.seed, "bootstrap/curve"));
        s.x.push_back(runs[0][c][0]);
        s.y.push_back(ci.point);
        s.lo.push_back(ci.lo);
        s.hi.push_back(ci.hi);
      }
      series.push_back(s);
    }
    const auto path = ws.layout().plots() / "learning_curves.svg";
    plot::write_text(path, plot::curves_svg(series, "IQM fraction of apples eaten", "environment steps", "fraction"));
    rep.files.push_back(path);
  }
  return rep;
}

std::vector<oracles::Check> verify(Workspace& ws) {
  std::vector<oracles::Check> out;
  bool have[6] = {};
  for (int i = 0; i < 6; ++i) {
    const auto s = static_cast<Stage>(i);
    if (!fs::exists(ws.layout().artifact(s))) continue;
    have[i] = true;
    oracles::Check c{std::string("artifact hashes: ") + config::stage_name(s), true, ""};
    try {
      ws.stored_content(s);
      if (s == Stage::kCollect) ws.dataset();
    } catch (const Error& e) {
      c.ok = false;
      c.detail = e.what();
    }
    out.push_back(c);
  }
  for (auto& c : oracles::core_suite(ws.cfg().seed)) out.push_back(c);

  auto guarded = [&](const std::string& name, const std::function<oracles::Check()>& fn) {
    try {
      out.push_back(fn());
    } catch (const Error& e) {
      out.push_back({name, false, e.what()});
    }
  };
  if (have[static_cast<int>(Stage::kDiscover)]) {
    guarded("basis exactness", [&] {
      const auto& b = ws.basis();
      const auto g = spectral::build_graph(ws.dataset(), ws.abstraction(), ws.cfg().count_weighted, 0, ws.cfg().min_visits);
      const auto chk = spectral::check_basis(spectral::restricted_laplacian(g, b), b.eigenvalues, b.eigenvectors);
      return oracles::Check{"basis exactness", chk.ok(),
                            "residual " + std::to_string(chk.residual) + " orth " + std::to_string(chk.orthonormality)};
    });
  }
  if (have[static_cast<int>(Stage::kOptions)] && fs::exists(ws.layout().option_rollouts())) {
    guarded("telescoping identity", [&] {
      std::ifstream in(ws.layout().option_rollouts());
      std::string line;
      double gap = 0.0;
      long n = 0;
      while (std::getline(in, line)) {
        const auto j = json::parse(line);
        options::Rollout ro;
        for (const auto& s : j.at("states")) ro.states.push_back(state_from_json(s));
        ro.rewards = j.at("rewards").get<std::vector<double>>();
        options::IntrinsicRewardSpec rs{&ws.basis(), &ws.abstraction(), j.at("k"), j.at("sign")};
        gap = std::max(gap, oracles::telescoping_gap({ro}, rs));
        ++n;
      }
      return oracles::Check{"telescoping identity", n > 0 && gap <= 1e-9,
                            std::to_string(n) + " trajectories, max gap " + std::to_string(gap)};
    });
  }
  if (fs::exists(ws.layout().transcript())) {
    guarded("transcript discount replay", [&] {
      std::ifstream in(ws.layout().transcript());
      std::string line;
      double gap = 0.0;
      long n = 0;
      while (std::getline(in, line)) {
        const auto j = json::parse(line);
        const auto [ret, boot] = macdec::replay_discount(j.at("rewards").get<std::vector<double>>(), ws.cfg().downstream.gamma);
        gap = std::max({gap, std::abs(ret - j.at("discounted_return").get<double>()),
                        std::abs(boot - j.at("bootstrap").get<double>())});
        ++n;
      }
      return oracles::Check{"transcript discount replay", gap == 0.0, std::to_string(n) + " records"};
    });
  }
  return out;
}

int run_command(const std::string& command, const config::PipelineConfig& cfg, const fs::path& out, std::ostream& log,
                std::ostream& err) {
  try {
    Workspace ws(cfg, out, log);
    if (command == "collect") {
      collect(ws);
    } else if (command == "train-metric") {
      train_metric(ws);
    } else if (command == "train-fermat") {
      train_fermat(ws);
    } else if (command == "discover") {
      discover(ws);
    } else if (command == "train-options") {
      train_options(ws);
    } else if (command == "evaluate") {
      evaluate(ws);
    } else if (command == "sweep-options") {
      const auto rep = sweep_options(ws);
      if (rep.saturation_flag) log << "sweep-options: saturation flag set\n";
    } else if (command == "plot") {
      const auto rep = plot(ws);
      log << "plot: " << rep.files.size() << " files under " << ws.layout().plots().string() << "\n";
    } else if (command == "verify") {
      bool ok = true;
      for (const auto& c : verify(ws)) {
        log << (c.ok ? "ok   " : "FAIL ") << c.name << (c.detail.empty() ? "" : ": " + c.detail) << "\n";
        ok = ok && c.ok;
      }
      return ok ? kOk : kCheckFailed;
    } else {
      err << "unknown command '" << command << "'\n";
      return kInvalid;
    }
    return kOk;
  } catch (const UpstreamError& e) {
    err << "error: " << e.what() << "; run `" << e.stage << "` first\n";
    return kMissingUpstream;
  } catch (const ConfigError& e) {
    err << "invalid configuration: " << e.what() << "\n";
    return kInvalid;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
}

}  // namespace fopt::pipeline

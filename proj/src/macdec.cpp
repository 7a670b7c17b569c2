#include "fopt/macdec.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace fopt::macdec {

namespace {

std::uint64_t mix(std::uint64_t h, std::int64_t v) { return splitmix64(h ^ static_cast<std::uint64_t>(v)); }

std::uint64_t mix_obs(std::uint64_t h, const grid::Observation& o) {
  // Features are integers in grid units; rounding is exact.
  for (double v : o.own) h = mix(h, std::llround(v));
  for (const auto& d : o.teammate_offsets) {
    h = mix(h, std::llround(d[0]));
    h = mix(h, std::llround(d[1]));
  }
  for (bool b : o.teammate_near_apple) h = mix(h, b ? 1 : 2);
  for (auto t : o.types) h = mix(h, static_cast<int>(t));
  return mix(h, o.apples);
}

bool unanimous_terminate(const std::vector<int>& acts) {
  return std::all_of(acts.begin(), acts.end(), [](int a) { return a == options::kTerminate; });
}

int eps_greedy(const ControllerQ& q, int agent, std::uint64_t key, double eps, Rng& rng) {
  if (uniform01(rng) < eps) {
    const auto& legal = q.legal(agent);
    return legal[uniform_index(rng, legal.size())];
  }
  return q.greedy(agent, key);
}

}  // namespace

std::vector<int> legal_macros(grid::AgentType type, int n_options) {
  std::vector<int> out;
  for (grid::Action a : grid::legal_actions(type)) out.push_back(static_cast<int>(a));
  for (int j = 0; j < n_options; ++j) out.push_back(kFirstOption + j);
  return out;
}

ExecutionPlan resolve_votes(const std::vector<int>& sel, int n_options, const grid::GridSpec& spec) {
  const int n = spec.n_agents;
  if (static_cast<int>(sel.size()) != n) throw ActionError("one selection per agent is required");
  for (int i = 0; i < n; ++i) {
    if (sel[i] < 0 || sel[i] >= kFirstOption + n_options) {
      throw ActionError("unknown macro-action id " + std::to_string(sel[i]));
    }
    if (!is_option(sel[i]) && !grid::is_legal(spec.type_of(i), grid::action_from_int(sel[i]))) {
      throw ActionError("agent " + std::to_string(i) + " cannot take primitive " + std::to_string(sel[i]));
    }
  }
  ExecutionPlan p;
  p.primitives.assign(n, grid::Action::kNoop);
  p.failed_vote.assign(n, false);
  // n_W = N: every agent must name the same option.
  if (is_option(sel[0]) && std::all_of(sel.begin(), sel.end(), [&](int m) { return m == sel[0]; })) {
    p.option = sel[0] - kFirstOption;
    return p;
  }
  for (int i = 0; i < n; ++i) {
    if (is_option(sel[i])) {
      p.failed_vote[i] = true;
    } else {
      p.primitives[i] = grid::action_from_int(sel[i]);
    }
  }
  return p;
}

std::vector<std::uint64_t> macro_keys(const grid::GridSpec& spec, const grid::JointState& s) {
  const auto obs = grid::observe(spec, s);
  const int n = static_cast<int>(obs.size());
  std::vector<std::uint64_t> out(n);
  for (int i = 0; i < n; ++i) {
    std::uint64_t h = mix_obs(0x6a09e667f3bcc909ULL, obs[i]);
    for (int j = 0; j < n; ++j) {
      if (j != i) h = mix_obs(h, obs[j]);
    }
    out[i] = h;
  }
  return out;
}

ControllerQ::ControllerQ(const grid::GridSpec& spec, int n_options, double init)
    : n_options_(n_options), init_(init), init_row_(kFirstOption + n_options, init), tables_(spec.n_agents) {
  for (int i = 0; i < spec.n_agents; ++i) legal_.push_back(legal_macros(spec.type_of(i), n_options));
}

double ControllerQ::at(int agent, std::uint64_t key, int macro) const {
  const auto& t = tables_[agent];
  auto it = t.find(key);
  return it == t.end() ? init_ : it->second[macro];
}

double& ControllerQ::at_mut(int agent, std::uint64_t key, int macro) {
  auto& row = tables_[agent][key];
  if (row.empty()) row = init_row_;
  return row[macro];
}

int ControllerQ::greedy(int agent, std::uint64_t key) const {
  const auto& t = tables_[agent];
  auto it = t.find(key);
  const std::vector<double>& row = it == t.end() ? init_row_ : it->second;
  int best = -1;
  for (int m : legal_[agent]) {
    if (best < 0 || row[m] > row[best]) best = m;
  }
  return best;
}

double ControllerQ::value(int agent, std::uint64_t key) const { return at(agent, key, greedy(agent, key)); }

const char* macro_end_name(MacroEnd e) {
  switch (e) {
    case MacroEnd::kPrimitive: return "primitive";
    case MacroEnd::kUnanimous: return "unanimous-terminate";
    case MacroEnd::kStepCap: return "step-cap";
    case MacroEnd::kEnvDone: return "env-done";
    case MacroEnd::kInterrupted: return "interrupted";
  }
  return "?";
}

std::pair<double, double> replay_discount(const std::vector<double>& rewards, double gamma) {
  double ret = 0.0;
  double g = 1.0;
  for (double r : rewards) {
    ret += g * r;
    g *= gamma;
  }
  return {ret, g};
}

MacroRecord run_macro_step(const grid::GridSpec& spec, const grid::JointState& s, const std::vector<int>& selections,
                           const ExecutionPlan& plan, const OptionLibrary& lib, const ControllerQ* q,
                           const MacroStepConfig& cfg) {
  MacroRecord rec;
  rec.selections = selections;
  rec.plan = plan;
  rec.states.push_back(s);
  auto advance = [&](const std::vector<grid::Action>& prim) {
    grid::StepResult r = grid::step(spec, rec.states.back(), prim, false);
    rec.actions.push_back(prim);
    rec.rewards.push_back(r.reward);
    rec.states.push_back(std::move(r.state));
    rec.done = r.done;
  };
  if (plan.option < 0) {
    advance(plan.primitives);
    rec.end = MacroEnd::kPrimitive;
  } else {
    if (plan.option >= lib.size() || !lib.keyer) throw ActionError("plan names an option outside the library");
    const options::JointOption& o = lib.options[plan.option];
    const int macro = kFirstOption + plan.option;
    rec.end = MacroEnd::kStepCap;
    for (int t = 0; t < o.step_cap; ++t) {
      const grid::JointState& cur = rec.states.back();
      if (t > 0 && cfg.interruption && q) {
        const auto keys = macro_keys(spec, cur);
        bool interrupt = false;
        for (int i = 0; i < spec.n_agents && !interrupt; ++i) interrupt = q->at(i, keys[i], macro) < q->value(i, keys[i]);
        if (interrupt) {
          rec.end = MacroEnd::kInterrupted;
          break;
        }
      }
      const auto acts = options::option_actions(o, *lib.keyer, spec, cur);
      if (unanimous_terminate(acts)) {
        // Terminating at initiation still costs one No-Op step.
        if (t == 0) advance(std::vector<grid::Action>(spec.n_agents, grid::Action::kNoop));
        rec.end = rec.done ? MacroEnd::kEnvDone : MacroEnd::kUnanimous;
        break;
      }
      advance(options::to_primitives(acts));
      if (rec.done) {
        rec.end = MacroEnd::kEnvDone;
        break;
      }
    }
  }
  std::tie(rec.discounted_return, rec.bootstrap) = replay_discount(rec.rewards, cfg.gamma);
  return rec;
}

int intra_option_update(ControllerQ& q, const grid::GridSpec& spec, const MacroRecord& rec, const OptionLibrary& lib,
                        const LearnConfig& cfg) {
  if (lib.size() == 0) return 0;
  if (!lib.keyer) throw ActionError("option library has no keyer");
  int count = 0;
  const int n = spec.n_agents;
  std::vector<std::uint64_t> keys = macro_keys(spec, rec.states[0]);
  for (int t = 0; t < rec.tau(); ++t) {
    const grid::JointState& s = rec.states[t];
    const grid::JointState& next = rec.states[t + 1];
    const std::vector<std::uint64_t> next_keys = macro_keys(spec, next);
    const bool terminal = rec.done && t + 1 == rec.tau();
    for (int j = 0; j < lib.size(); ++j) {
      if (j == rec.plan.option) continue;
      const options::JointOption& o = lib.options[j];
      const auto acts = options::option_actions(o, *lib.keyer, spec, s);
      if (unanimous_terminate(acts) || options::to_primitives(acts) != rec.actions[t]) continue;
      const bool ends = !terminal && unanimous_terminate(options::option_actions(o, *lib.keyer, spec, next));
      const int macro = kFirstOption + j;
      for (int i = 0; i < n; ++i) {
        double u = 0.0;
        if (!terminal) u = ends ? q.value(i, next_keys[i]) : q.at(i, next_keys[i], macro);
        double& v = q.at_mut(i, keys[i], macro);
        v += cfg.alpha * (rec.rewards[t] + cfg.gamma * u - v);
      }
      ++count;
    }
    keys = next_keys;
  }
  return count;
}

int update_controller(ControllerQ& q, const grid::GridSpec& spec, const MacroRecord& rec, const OptionLibrary& lib,
                       const LearnConfig& cfg) {
  const int n = spec.n_agents;
  const std::vector<std::uint64_t> k0 = macro_keys(spec, rec.states.front());
  const std::vector<std::uint64_t> kt = macro_keys(spec, rec.states.back());
  if (rec.plan.option < 0) {
    // One-step backup of every selection; a failed voter's option id is
    // credited with the No-Op step it actually took.
    for (int i = 0; i < n; ++i) {
      const double boot = rec.done ? 0.0 : cfg.gamma * q.value(i, kt[i]);
      double& v = q.at_mut(i, k0[i], rec.selections[i]);
      v += cfg.alpha * (rec.rewards[0] + boot - v);
    }
  } else {
    const int macro = kFirstOption + rec.plan.option;
    for (int i = 0; i < n; ++i) {
      const double boot = rec.done ? 0.0 : rec.bootstrap * q.value(i, kt[i]);
      double& v = q.at_mut(i, k0[i], macro);
      v += cfg.alpha * (rec.discounted_return + boot - v);
    }
    if (cfg.primitive_updates) {
      std::vector<std::uint64_t> keys = k0;
      for (int t = 0; t < rec.tau(); ++t) {
        const std::vector<std::uint64_t> next_keys = macro_keys(spec, rec.states[t + 1]);
        const bool terminal = rec.done && t + 1 == rec.tau();
        for (int i = 0; i < n; ++i) {
          const double boot = terminal ? 0.0 : cfg.gamma * q.value(i, next_keys[i]);
          double& v = q.at_mut(i, keys[i], static_cast<int>(rec.actions[t][i]));
          v += cfg.alpha * (rec.rewards[t] + boot - v);
        }
        keys = next_keys;
      }
    }
  }
  return cfg.intra_option ? intra_option_update(q, spec, rec, lib, cfg) : 0;
}

CurvePoint evaluate_controller(const grid::GridSpec& spec, const ControllerQ& q, const OptionLibrary& lib,
                               const DownstreamConfig& cfg, long step) {
  CurvePoint pt;
  pt.step = step;
  if (cfg.eval_episodes <= 0) return pt;
  Rng rng = make_rng(cfg.seed, "downstream/eval");
  const MacroStepConfig mc{cfg.gamma, cfg.interruption};
  const int n_apples = static_cast<int>(spec.apples.size());
  for (int e = 0; e < cfg.eval_episodes; ++e) {
    grid::JointState s = grid::reset(spec, derive_seed(cfg.seed, "downstream/eval-reset/" + std::to_string(e)));
    const std::uint32_t start_apples = s.apples;
    double ret = 0.0;
    while (true) {
      const auto keys = macro_keys(spec, s);
      std::vector<int> sel(spec.n_agents);
      for (int i = 0; i < spec.n_agents; ++i) sel[i] = eps_greedy(q, i, keys[i], cfg.eps_eval, rng);
      const ExecutionPlan plan = resolve_votes(sel, lib.size(), spec);
      MacroRecord rec = run_macro_step(spec, s, sel, plan, lib, &q, mc);
      for (double r : rec.rewards) ret += r;
      s = std::move(rec.states.back());
      if (rec.done) break;
    }
    pt.ret += ret;
    if (n_apples > 0) {
      pt.fraction += static_cast<double>(grid::count_bits(start_apples) - grid::count_bits(s.apples)) / n_apples;
    }
  }
  pt.ret /= cfg.eval_episodes;
  pt.fraction /= cfg.eval_episodes;
  return pt;
}

namespace {

long checkpoint_step(const DownstreamConfig& cfg, int k) {
  return static_cast<long>(std::llround(static_cast<double>(cfg.steps) * k / std::max(1, cfg.checkpoints)));
}

void validate(const DownstreamConfig& cfg) {
  if (cfg.steps < 1) throw ConfigError("downstream training needs at least one step");
  if (cfg.checkpoints < 1) throw ConfigError("at least one checkpoint is required");
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
}

}  // namespace

DownstreamResult train_downstream(const grid::GridSpec& spec, const OptionLibrary& lib, const DownstreamConfig& cfg,
                                  const RecordSink& sink) {
  validate(cfg);
  DownstreamResult res;
  res.q = ControllerQ(spec, lib.size(), cfg.q_init);
  ControllerQ& q = res.q;
  Rng rng = make_rng(cfg.seed, "downstream/explore");
  const MacroStepConfig mc{cfg.gamma, cfg.interruption};
  const LearnConfig lc{cfg.alpha, cfg.gamma, cfg.intra_option, cfg.primitive_updates};
  res.curve.push_back(evaluate_controller(spec, q, lib, cfg, 0));
  int next_cp = 1;
  long step = 0;
  long episode = 0;
  while (step < cfg.steps) {
    grid::JointState s = grid::reset(spec, derive_seed(cfg.seed, "downstream/reset/" + std::to_string(episode++)));
    while (true) {
      const auto keys = macro_keys(spec, s);
      const double eps = options::epsilon_at(step, cfg.steps, cfg.eps_start, cfg.eps_end, cfg.eps_decay_fraction);
      std::vector<int> sel(spec.n_agents);
      for (int i = 0; i < spec.n_agents; ++i) sel[i] = eps_greedy(q, i, keys[i], eps, rng);
      const ExecutionPlan plan = resolve_votes(sel, lib.size(), spec);
      MacroRecord rec = run_macro_step(spec, s, sel, plan, lib, &q, mc);
      res.intra_backups += update_controller(q, spec, rec, lib, lc);
      ++res.macro_decisions;
      if (plan.option >= 0) ++res.option_starts;
      if (sink) sink(rec);
      step += rec.tau();
      while (next_cp <= cfg.checkpoints && step >= checkpoint_step(cfg, next_cp)) {
        res.curve.push_back(evaluate_controller(spec, q, lib, cfg, checkpoint_step(cfg, next_cp)));
        ++next_cp;
      }
      s = std::move(rec.states.back());
      if (rec.done || step >= cfg.steps) break;
    }
  }
  return res;
}

DownstreamResult train_flat_iql(const grid::GridSpec& spec, const DownstreamConfig& cfg) {
  validate(cfg);
  DownstreamResult res;
  res.q = ControllerQ(spec, 0, cfg.q_init);
  ControllerQ& q = res.q;
  const OptionLibrary none;
  Rng rng = make_rng(cfg.seed, "downstream/explore");
  res.curve.push_back(evaluate_controller(spec, q, none, cfg, 0));
  int next_cp = 1;
  long step = 0;
  long episode = 0;
  const int n = spec.n_agents;
  while (step < cfg.steps) {
    grid::JointState s = grid::reset(spec, derive_seed(cfg.seed, "downstream/reset/" + std::to_string(episode++)));
    bool done = false;
    while (!done && step < cfg.steps) {
      const auto keys = macro_keys(spec, s);
      const double eps = options::epsilon_at(step, cfg.steps, cfg.eps_start, cfg.eps_end, cfg.eps_decay_fraction);
      std::vector<grid::Action> acts(n);
      for (int i = 0; i < n; ++i) {
        int a;
        if (uniform01(rng) < eps) {
          a = q.legal(i)[uniform_index(rng, q.legal(i).size())];
        } else {
          a = q.greedy(i, keys[i]);
        }
        acts[i] = grid::action_from_int(a);
      }
      grid::StepResult r = grid::step(spec, s, acts, false);
      const auto next_keys = macro_keys(spec, r.state);
      for (int i = 0; i < n; ++i) {
        const double boot = r.done ? 0.0 : cfg.gamma * q.value(i, next_keys[i]);
        double& v = q.at_mut(i, keys[i], static_cast<int>(acts[i]));
        v += cfg.alpha * (r.reward + boot - v);
      }
      ++res.macro_decisions;
      ++step;
      while (next_cp <= cfg.checkpoints && step >= checkpoint_step(cfg, next_cp)) {
        res.curve.push_back(evaluate_controller(spec, q, none, cfg, checkpoint_step(cfg, next_cp)));
        ++next_cp;
      }
      done = r.done;
      s = std::move(r.state);
    }
  }
  return res;
}

void write_curve_csv(std::ostream& os, std::uint64_t seed, const std::vector<CurvePoint>& curve, bool header) {
  if (header) os << "seed,step,fraction,return\n";
  for (const auto& p : curve) os << seed << ',' << p.step << ',' << p.fraction << ',' << p.ret << '\n';
}

nlohmann::json record_to_json(const MacroRecord& rec) {
  nlohmann::json j;
  j["selections"] = rec.selections;
  j["option"] = rec.plan.option;
  j["end"] = macro_end_name(rec.end);
  j["tau"] = rec.tau();
  nlohmann::json states = nlohmann::json::array();
  for (const auto& s : rec.states) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : s.cells) cells.push_back({c.x, c.y});
    states.push_back({{"cells", cells}, {"apples", s.apples}, {"step", s.step}});
  }
  j["states"] = states;
  nlohmann::json acts = nlohmann::json::array();
  for (const auto& a : rec.actions) {
    std::vector<int> v;
    for (auto x : a) v.push_back(static_cast<int>(x));
    acts.push_back(v);
  }
  j["actions"] = acts;
  j["rewards"] = rec.rewards;
  j["discounted_return"] = rec.discounted_return;
  j["bootstrap"] = rec.bootstrap;
  j["done"] = rec.done;
  return j;
}

}  // namespace fopt::macdec

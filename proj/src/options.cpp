#include "fopt/options.hpp"

#include <algorithm>
#include <cmath>

namespace fopt::options {

namespace {

const QRow kZeroRow{};

std::uint64_t hash_ints(std::initializer_list<std::int64_t> head, const std::vector<int>& tail) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto v : head) h = splitmix64(h ^ static_cast<std::uint64_t>(v));
  for (int v : tail) h = splitmix64(h ^ static_cast<std::uint32_t>(v));
  return h;
}

}  // namespace

const QRow& QTable::row(std::uint64_t key) const {
  auto it = rows_.find(key);
  return it == rows_.end() ? kZeroRow : it->second;
}

std::vector<int> legal_option_actions(grid::AgentType type) {
  std::vector<int> out;
  for (grid::Action a : grid::legal_actions(type)) out.push_back(static_cast<int>(a));
  out.push_back(kTerminate);
  return out;
}

int greedy(const QRow& q, grid::AgentType type) {
  int best = -1;
  for (int a = 0; a < grid::kNumActions; ++a) {
    if (!grid::is_legal(type, static_cast<grid::Action>(a))) continue;
    if (best < 0 || q[a] > q[best]) best = a;
  }
  // Termination wins ties: stop once no move promises more than stopping.
  return q[kTerminate] >= q[best] ? kTerminate : best;
}

double max_legal(const QRow& q, grid::AgentType type) { return q[greedy(q, type)]; }

const char* key_mode_name(KeyMode m) { return m == KeyMode::kJoint ? "joint" : "relative"; }

KeyMode key_mode_from_name(const std::string& s) {
  if (s == "joint") return KeyMode::kJoint;
  if (s == "relative") return KeyMode::kRelative;
  throw ConfigError("unknown option key mode '" + s + "'");
}

OptionKeyer::OptionKeyer(grid::GridSpec spec, KeyMode mode, const fermat::RelativeAbstraction* abs, int clip)
    : spec_(std::move(spec)), mode_(mode), abs_(abs), clip_(clip) {
  if (mode == KeyMode::kRelative && !abs) throw ConfigError("relative option keys need a relative abstraction");
  if (clip < 1) throw ConfigError("offset clip must be positive");
}

std::vector<std::uint64_t> OptionKeyer::keys(const grid::JointState& s) const {
  const int n = spec_.n_agents;
  std::vector<std::uint64_t> out(n);
  if (mode_ == KeyMode::kJoint) {
    std::vector<int> cells;
    for (const auto& c : s.cells) {
      cells.push_back(c.x);
      cells.push_back(c.y);
    }
    const std::uint64_t h = hash_ints({s.apples}, cells);
    std::fill(out.begin(), out.end(), h);
    return out;
  }
  const fermat::RelativeRepresentation r = abs_->representation(s);
  for (int i = 0; i < n; ++i) {
    const auto own = grid::single_agent_features(spec_, i, s.cells[i]);
    std::int64_t off[grid::kNumFeatures];
    for (int f = 0; f < grid::kNumFeatures; ++f) {
      const long o = grid::has_feature(spec_.type_of(i), f) ? std::lround(own[f] - r.fermat[f]) : 0;
      off[f] = std::clamp<long>(o, -clip_, clip_);
    }
    out[i] = hash_ints({s.apples, off[0], off[1]}, r.quantized);
  }
  return out;
}

double IntrinsicRewardSpec::value(const grid::JointState& s) const { return basis->value(k, abs->key(s)); }

double IntrinsicRewardSpec::operator()(const grid::JointState& s, const grid::JointState& next) const {
  return sign * (value(next) - value(s));
}

double epsilon_at(long step, long total, double start, double end, double decay_fraction) {
  const double horizon = std::max(1.0, decay_fraction * static_cast<double>(total));
  const double t = std::min(1.0, static_cast<double>(step) / horizon);
  return start + t * (end - start);
}

int option_id(int k, int sign) {
  if (k < 1) throw ConfigError("options come from non-trivial eigenvectors (k >= 1)");
  return 2 * (k - 1) + (sign < 0 ? 1 : 0);
}

std::vector<int> option_actions(const JointOption& o, const OptionKeyer& keyer, const grid::GridSpec& spec,
                                const grid::JointState& s, Rng* rng, double eps) {
  const auto keys = keyer.keys(s);
  std::vector<int> out(spec.n_agents);
  for (int i = 0; i < spec.n_agents; ++i) {
    const grid::AgentType t = spec.type_of(i);
    if (rng && uniform01(*rng) < eps) {
      const auto legal = legal_option_actions(t);
      out[i] = legal[uniform_index(*rng, legal.size())];
    } else {
      out[i] = greedy(o.q[i].row(keys[i]), t);
    }
  }
  return out;
}

std::vector<grid::Action> to_primitives(const std::vector<int>& acts) {
  std::vector<grid::Action> out(acts.size());
  for (std::size_t i = 0; i < acts.size(); ++i) {
    out[i] = acts[i] == kTerminate ? grid::Action::kNoop : grid::action_from_int(acts[i]);
  }
  return out;
}

JointOption train_option(const grid::GridSpec& spec, const IntrinsicRewardSpec& reward, const OptionKeyer& keyer,
                         const OptionConfig& cfg, int id) {
  if (cfg.steps < 1) throw ConfigError("option training needs at least one step");
  if (cfg.step_cap < 1) throw ConfigError("option step cap must be positive");
  JointOption o;
  o.id = id;
  o.eigen_index = reward.k;
  o.sign = reward.sign;
  o.n_w = spec.n_agents;
  o.step_cap = cfg.step_cap;
  o.mode = keyer.mode();
  o.q.resize(spec.n_agents);
  const std::string tag = "option/" + std::to_string(id);
  Rng rng = make_rng(cfg.seed, tag + "/explore");
  const int n = spec.n_agents;
  long step = 0;
  long episode = 0;
  while (step < cfg.steps) {
    grid::JointState s = grid::reset(spec, derive_seed(cfg.seed, tag + "/reset/" + std::to_string(episode++)));
    auto keys = keyer.keys(s);
    double value_s = reward.value(s);
    for (int t = 0; t < cfg.step_cap && step < cfg.steps; ++t, ++step) {
      const double eps = epsilon_at(step, cfg.steps, cfg.eps_start, cfg.eps_end, cfg.eps_decay_fraction);
      const std::vector<int> acts = option_actions(o, keyer, spec, s, &rng, eps);
      const bool unanimous = std::all_of(acts.begin(), acts.end(), [](int a) { return a == kTerminate; });
      if (unanimous) {
        for (int i = 0; i < n; ++i) {
          double& q = o.q[i].mutable_row(keys[i])[kTerminate];
          q += cfg.alpha * (0.0 - q);
        }
        ++step;
        break;
      }
      const grid::StepResult r = grid::step(spec, s, to_primitives(acts), false);
      const double value_next = reward.value(r.state);
      const double ri = reward.sign * (value_next - value_s);
      const bool last = r.done || t + 1 == cfg.step_cap;
      const auto next_keys = keyer.keys(r.state);
      for (int i = 0; i < n; ++i) {
        const grid::AgentType type = spec.type_of(i);
        const double boot = last ? 0.0 : cfg.gamma * max_legal(o.q[i].row(next_keys[i]), type);
        double& q = o.q[i].mutable_row(keys[i])[acts[i]];
        q += cfg.alpha * (ri + boot - q);
        if (!(std::abs(q) <= 1e6)) throw NumericsError("option Q-values diverged");
      }
      s = r.state;
      keys = next_keys;
      value_s = value_next;
      if (r.done) {
        ++step;
        break;
      }
    }
  }
  return o;
}

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::kUnanimous: return "unanimous-terminate";
    case Termination::kStepCap: return "step-cap";
    case Termination::kEnvDone: return "env-done";
  }
  return "?";
}

Rollout rollout_option(const JointOption& o, const OptionKeyer& keyer, const grid::GridSpec& spec,
                       const grid::JointState& start, const IntrinsicRewardSpec* reward) {
  Rollout r;
  r.states.push_back(start);
  grid::JointState s = start;
  for (int t = 0; t < o.step_cap; ++t) {
    const auto acts = option_actions(o, keyer, spec, s);
    if (std::all_of(acts.begin(), acts.end(), [](int a) { return a == kTerminate; })) {
      r.reason = Termination::kUnanimous;
      return r;
    }
    const auto prim = to_primitives(acts);
    const grid::StepResult res = grid::step(spec, s, prim, false);
    if (reward) r.rewards.push_back((*reward)(s, res.state));
    r.actions.push_back(prim);
    r.states.push_back(res.state);
    s = res.state;
    if (res.done) {
      r.reason = Termination::kEnvDone;
      return r;
    }
  }
  r.reason = Termination::kStepCap;
  return r;
}

std::array<double, grid::kNumFeatures> feature_spread(const grid::GridSpec& spec, const grid::JointState& s) {
  std::array<double, grid::kNumFeatures> out{};
  for (int f = 0; f < grid::kNumFeatures; ++f) {
    std::vector<int> v;
    for (int i = 0; i < spec.n_agents; ++i) {
      if (grid::has_feature(spec.type_of(i), f)) v.push_back(f == 0 ? s.cells[i].x : s.cells[i].y);
    }
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    const int med = v[(v.size() - 1) / 2];
    for (int x : v) out[f] += std::abs(x - med);
  }
  return out;
}

std::array<double, grid::kNumFeatures> fermat_offsets(const grid::GridSpec& spec, const grid::JointState& s,
                                                      const metric::Features& fermat) {
  std::array<double, grid::kNumFeatures> out{};
  for (int f = 0; f < grid::kNumFeatures; ++f) {
    int n = 0;
    for (int i = 0; i < spec.n_agents; ++i) {
      if (!grid::has_feature(spec.type_of(i), f)) continue;
      out[f] += std::abs((f == 0 ? s.cells[i].x : s.cells[i].y) - fermat[f]);
      ++n;
    }
    if (n > 0) out[f] /= n;
  }
  return out;
}

nlohmann::json JointOption::to_json() const {
  nlohmann::json j;
  j["id"] = id;
  j["eigen_index"] = eigen_index;
  j["sign"] = sign;
  j["n_w"] = n_w;
  j["step_cap"] = step_cap;
  j["key_mode"] = key_mode_name(mode);
  j["config_hash"] = config_hash;
  nlohmann::json tables = nlohmann::json::array();
  for (const QTable& t : q) {
    // Sorted for byte-stable artifacts.
    std::vector<std::pair<std::uint64_t, QRow>> rows(t.rows().begin(), t.rows().end());
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    nlohmann::json jt = nlohmann::json::array();
    for (const auto& [k, row] : rows) jt.push_back({k, row});
    tables.push_back(jt);
  }
  j["q"] = tables;
  return j;
}

JointOption JointOption::from_json(const nlohmann::json& j) {
  JointOption o;
  o.id = j.at("id");
  o.eigen_index = j.at("eigen_index");
  o.sign = j.at("sign");
  o.n_w = j.at("n_w");
  o.step_cap = j.at("step_cap");
  o.mode = key_mode_from_name(j.at("key_mode"));
  o.config_hash = j.at("config_hash");
  for (const auto& jt : j.at("q")) {
    QTable t;
    for (const auto& e : jt) t.mutable_row(e.at(0).get<std::uint64_t>()) = e.at(1).get<QRow>();
    o.q.push_back(std::move(t));
  }
  return o;
}

}  // namespace fopt::options

#include "fopt/fermat.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace fopt::fermat {

using nn::Matrix;
using nn::Vector;

ExactFermat fermat_exact(const grid::FactoredState& fs, const metric::ExactDistanceTable& table) {
  std::vector<int> idx(fs.n_agents);
  for (int i = 0; i < fs.n_agents; ++i) {
    const auto a = fs.agent(i);
    IntFeatures s{};
    for (int f = 0; f < F; ++f) s[f] = static_cast<int>(std::lround(a[f]));
    const auto k = table.index_of(s);
    if (!k) throw MetricError("agent state outside the distance table");
    idx[i] = *k;
  }
  ExactFermat best;
  best.d_f = std::numeric_limits<int>::max();
  for (int c = 0; c < table.size(); ++c) {
    int sum = 0;
    for (int i : idx) sum += table.at(i, c);
    if (sum < best.d_f) {
      best.d_f = sum;
      best.state = table.states()[c];
    }
  }
  return best;
}

FermatEncoder::FermatEncoder(const grid::GridSpec& spec, const FermatConfig& cfg) {
  types_.resize(spec.n_agents);
  for (int i = 0; i < spec.n_agents; ++i) types_[i] = spec.type_of(i);
  for (int f = 0; f < F; ++f) {
    hi_[f] = spec.feature_extent(f) - 1;
    scale_[f] = 1.0 / std::max(hi_[f], 1.0);
  }
  std::vector<int> dims{spec.n_agents * (F + 2)};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(F);
  net_ = nn::Mlp(dims, derive_seed(cfg.seed, "fermat/init"));
}

Matrix FermatEncoder::make_input(const std::vector<grid::FactoredState>& states) const {
  const int n = n_agents();
  Matrix x = Matrix::Zero(n * (F + 2), static_cast<Eigen::Index>(states.size()));
  for (std::size_t c = 0; c < states.size(); ++c) {
    if (states[c].n_agents != n) throw ShapeError("factored state has the wrong agent count");
    for (int i = 0; i < n; ++i) {
      const auto a = states[c].agent(i);
      for (int f = 0; f < F; ++f) x(i * (F + 2) + f, c) = a[f] * scale_[f];
      x(i * (F + 2) + F + metric::type_slot(types_[i]), c) = 1.0;
    }
  }
  return x;
}

Matrix FermatEncoder::forward_raw(const Matrix& input) const {
  Matrix y = net_.forward(input);
  for (int f = 0; f < F; ++f) y.row(f) /= scale_[f];
  return y;
}

Matrix FermatEncoder::predict(const std::vector<grid::FactoredState>& states) const {
  if (!trained_) throw StateError("Fermat encoder has not been trained");
  Matrix y = forward_raw(make_input(states));
  for (int f = 0; f < F; ++f) y.row(f) = y.row(f).cwiseMax(0.0).cwiseMin(hi_[f]);
  return y;
}

Features FermatEncoder::predict(const grid::FactoredState& s) const {
  const Matrix y = predict(std::vector<grid::FactoredState>{s});
  Features out;
  for (int f = 0; f < F; ++f) out[f] = y(f, 0);
  return out;
}

nlohmann::json FermatEncoder::to_json() const {
  std::vector<int> t;
  for (auto a : types_) t.push_back(static_cast<int>(a));
  return {{"net", net_.to_json()}, {"types", t}, {"scale", scale_}, {"box_hi", hi_}, {"trained", trained_}};
}

FermatEncoder FermatEncoder::from_json(const nlohmann::json& j) {
  FermatEncoder e;
  e.net_ = nn::Mlp::from_json(j.at("net"));
  for (int t : j.at("types").get<std::vector<int>>()) {
    if (t != 1 && t != 2) throw FormatError("unknown agent type in Fermat artifact");
    e.types_.push_back(static_cast<grid::AgentType>(t));
  }
  e.scale_ = j.at("scale").get<Features>();
  e.hi_ = j.at("box_hi").get<Features>();
  e.trained_ = j.at("trained");
  if (e.net_.input_dim() != e.n_agents() * (F + 2) || e.net_.output_dim() != F) {
    throw FormatError("Fermat network shape does not match its agent list");
  }
  return e;
}

double fermat_loss(const FermatEncoder& phi, const metric::LearnedDistance& d,
                   const std::vector<grid::FactoredState>& states, double power, Vector* grad) {
  const int B = static_cast<int>(states.size());
  const int n = phi.n_agents();
  if (B < 1) throw ConfigError("Fermat loss needs a nonempty batch");
  const Matrix x = phi.make_input(states);
  nn::GradTape tape;
  Matrix out = grad ? phi.net().forward(x, tape) : phi.net().forward(x);
  Matrix goal = out;
  for (int f = 0; f < F; ++f) goal.row(f) /= phi.scale()[f];

  Matrix src(F, static_cast<Eigen::Index>(B) * n);
  std::vector<grid::AgentType> types(static_cast<std::size_t>(B) * n);
  std::vector<metric::Pair> pairs(static_cast<std::size_t>(B) * n);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) {
      const int c = b * n + i;
      const auto a = states[b].agent(i);
      for (int f = 0; f < F; ++f) src(f, c) = a[f];
      types[c] = phi.types()[i];
      pairs[c] = {c, b};
    }
  }
  // The distance network is frozen: its tape never writes parameter gradients.
  metric::PairEvaluator ev(d, true);
  const Matrix z = ev.forward(src, types, goal, pairs);
  const auto& calib = d.calibration();
  double loss = 0.0;
  Matrix dz(F, z.cols());
  const double norm = 1.0 / (static_cast<double>(B) * n);
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    double dist = 0.0;
    for (int f = 0; f < F; ++f) dist += calib[f] * z(f, c);
    loss += norm * std::pow(dist, power);
    const double g = dist > 0.0 ? norm * power * std::pow(dist, power - 1.0) : (power == 1.0 ? norm : 0.0);
    for (int f = 0; f < F; ++f) dz(f, c) = g * calib[f];
  }
  if (!std::isfinite(loss)) throw NumericsError("Fermat loss is not finite");
  if (!grad) return loss;
  Matrix d_goal = Matrix::Zero(F, B);
  ev.backward(dz, nullptr, nullptr, &d_goal);
  for (int f = 0; f < F; ++f) d_goal.row(f) /= phi.scale()[f];
  phi.net().backward(tape, d_goal, *grad);
  return loss;
}

FermatEncoder train_fermat_encoder(const data::TransitionDataset& ds, const metric::LearnedDistance& d,
                                   const FermatConfig& cfg, FermatLog* log) {
  if (ds.transitions.empty()) throw ConfigError("dataset is empty");
  if (!d.trained()) throw StateError("Fermat training needs a trained distance");
  if (!(cfg.power > 0.0)) throw ConfigError("Fermat loss power must be positive");
  FermatEncoder phi(ds.spec, cfg);
  Rng rng = make_rng(cfg.seed, "fermat/batches");
  nn::AdamState adam(phi.net().parameters().size(), cfg.lr);
  const int n = ds.spec.n_agents;
  // Same-type agents are interchangeable, so reorderings stay within a type.
  std::vector<std::vector<int>> groups;
  for (int i = 0; i < n; ++i) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const auto& g) { return ds.spec.type_of(g[0]) == ds.spec.type_of(i); });
    if (it == groups.end()) {
      groups.push_back({i});
    } else {
      it->push_back(i);
    }
  }
  double running = 0.0;
  int running_n = 0;
  std::vector<grid::FactoredState> batch(cfg.batch);
  for (long it = 0; it < cfg.iterations; ++it) {
    for (auto& fs : batch) {
      grid::JointState s = ds.transitions[uniform_index(rng, ds.size())].state;
      if (cfg.permute) {
        for (const auto& g : groups) {
          for (std::size_t k = g.size(); k > 1; --k) {
            const std::size_t r = uniform_index(rng, k);
            std::swap(s.cells[g[k - 1]], s.cells[g[r]]);
          }
        }
      }
      fs = grid::factorize(s, ds.spec);
    }
    Vector g = phi.net().zero_grad();
    const double loss = fermat_loss(phi, d, batch, cfg.power, &g);
    nn::adam_step(phi.net().parameters(), g, adam);
    running += loss;
    ++running_n;
    if (log && cfg.log_every > 0 && ((it + 1) % cfg.log_every == 0 || it + 1 == cfg.iterations)) {
      log->iteration.push_back(it + 1);
      log->loss.push_back(running / running_n);
      running = 0.0;
      running_n = 0;
    }
  }
  phi.mark_trained();
  return phi;
}

std::vector<RelativeRepresentation> relative_representations(const std::vector<grid::FactoredState>& states,
                                                             const FermatEncoder& phi,
                                                             const metric::LearnedDistance& d, double grain,
                                                             bool scalar) {
  if (!(grain > 0.0)) throw ConfigError("quantization grain must be positive");
  std::vector<RelativeRepresentation> out(states.size());
  if (states.empty()) return out;
  const int n = phi.n_agents();
  const Matrix goal = phi.predict(states);
  const int B = static_cast<int>(states.size());
  Matrix src(F, static_cast<Eigen::Index>(B) * n), g(F, static_cast<Eigen::Index>(B) * n);
  std::vector<grid::AgentType> types(static_cast<std::size_t>(B) * n);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) {
      const auto a = states[b].agent(i);
      for (int f = 0; f < F; ++f) src(f, b * n + i) = a[f];
      g.col(b * n + i) = goal.col(b);
      types[b * n + i] = phi.types()[i];
    }
  }
  const Matrix z = d.per_feature_batch(src, types, g);
  for (int b = 0; b < B; ++b) {
    std::vector<double> v(F, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int f = 0; f < F; ++f) v[f] += z(f, b * n + i);
    }
    if (scalar) v = {std::accumulate(v.begin(), v.end(), 0.0)};
    for (int f = 0; f < F; ++f) out[b].fermat[f] = goal(f, b);
    out[b].values = v;
    out[b].quantized.resize(v.size());
    for (std::size_t f = 0; f < v.size(); ++f) out[b].quantized[f] = static_cast<int>(std::lround(v[f] / grain));
  }
  return out;
}

RelativeRepresentation relative_representation(const grid::FactoredState& fs, const FermatEncoder& phi,
                                               const metric::LearnedDistance& d, double grain, bool scalar) {
  return relative_representations({fs}, phi, d, grain, scalar).front();
}

std::size_t KeyHash::operator()(const Key& k) const {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (int v : k) h = splitmix64(h ^ static_cast<std::uint32_t>(v));
  return static_cast<std::size_t>(h);
}

std::vector<Key> Abstraction::keys(const std::vector<grid::JointState>& states) const {
  std::vector<Key> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(key(s));
  return out;
}

namespace {

Key cell_key(const grid::JointState& s) {
  Key k;
  k.reserve(s.cells.size() * 2);
  for (const auto& c : s.cells) {
    k.push_back(c.x);
    k.push_back(c.y);
  }
  return k;
}

}  // namespace

Key RawJointAbstraction::key(const grid::JointState& s) const { return cell_key(s); }

RelativeAbstraction::RelativeAbstraction(grid::GridSpec spec, const FermatEncoder& phi,
                                         const metric::LearnedDistance& d, double grain, bool scalar)
    : spec_(std::move(spec)), phi_(phi), d_(d), grain_(grain), scalar_(scalar) {
  if (!(grain > 0.0)) throw ConfigError("quantization grain must be positive");
}

RelativeRepresentation RelativeAbstraction::representation(const grid::JointState& s) const {
  const Key ck = cell_key(s);
  auto it = cache_.find(ck);
  if (it != cache_.end()) return it->second;
  auto r = relative_representation(grid::factorize(s, spec_), phi_, d_, grain_, scalar_);
  if (cache_.size() >= kMaxCache) cache_.clear();
  cache_.emplace(ck, r);
  return r;
}

Key RelativeAbstraction::key(const grid::JointState& s) const { return representation(s).quantized; }

std::vector<Key> RelativeAbstraction::keys(const std::vector<grid::JointState>& states) const {
  std::vector<grid::FactoredState> missing;
  std::vector<Key> missing_keys;
  std::unordered_map<Key, int, KeyHash> queued;
  for (const auto& s : states) {
    Key ck = cell_key(s);
    if (cache_.count(ck) || queued.count(ck)) continue;
    queued.emplace(ck, 0);
    missing.push_back(grid::factorize(s, spec_));
    missing_keys.push_back(std::move(ck));
  }
  constexpr std::size_t kChunk = 8192;
  std::unordered_map<Key, std::vector<int>, KeyHash> fresh;
  for (std::size_t b = 0; b < missing.size(); b += kChunk) {
    const std::size_t e = std::min(missing.size(), b + kChunk);
    std::vector<grid::FactoredState> chunk(missing.begin() + b, missing.begin() + e);
    auto reps = relative_representations(chunk, phi_, d_, grain_, scalar_);
    for (std::size_t i = 0; i < reps.size(); ++i) {
      fresh.emplace(missing_keys[b + i], reps[i].quantized);
      if (cache_.size() < kMaxCache) cache_.emplace(missing_keys[b + i], std::move(reps[i]));
    }
  }
  std::vector<Key> out;
  out.reserve(states.size());
  for (const auto& s : states) {
    const Key ck = cell_key(s);
    auto it = fresh.find(ck);
    out.push_back(it != fresh.end() ? it->second : cache_.at(ck).quantized);
  }
  return out;
}

void write_representation_csv(const std::filesystem::path& path, const std::vector<grid::JointState>& states,
                              const RelativeAbstraction& abs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  abs.keys(states);
  bool header = false;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto r = abs.representation(states[i]);
    if (!header) {
      out << "state_id";
      for (std::size_t f = 0; f < r.values.size(); ++f) out << ",value_" << f;
      for (std::size_t f = 0; f < r.quantized.size(); ++f) out << ",quantized_" << f;
      out << '\n';
      header = true;
    }
    out << i;
    for (double v : r.values) out << ',' << v;
    for (int v : r.quantized) out << ',' << v;
    out << '\n';
  }
}

std::vector<grid::JointState> enumerate_joint_states(const grid::GridSpec& spec) {
  const auto cells = grid::free_cells(spec);
  const int n = spec.n_agents;
  std::vector<grid::JointState> out;
  std::vector<int> idx(n, 0);
  const int m = static_cast<int>(cells.size());
  if (m < n) return out;
  auto distinct = [&] {
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (idx[i] == idx[j]) return false;
      }
    }
    return true;
  };
  while (true) {
    if (distinct()) {
      grid::JointState s;
      s.apples = grid::all_apples_mask(spec);
      for (int i = 0; i < n; ++i) s.cells.push_back(cells[idx[i]]);
      out.push_back(std::move(s));
    }
    int k = n - 1;
    while (k >= 0 && ++idx[k] == m) idx[k--] = 0;
    if (k < 0) break;
  }
  return out;
}

}  // namespace fopt::fermat

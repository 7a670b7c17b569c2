#include "fopt/metric.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "fopt/cmi.hpp"

namespace fopt::metric {

using grid::AgentType;
using nn::Matrix;
using nn::Vector;

int type_slot(AgentType t) { return t == AgentType::kRowOnly ? 0 : 1; }

// ---------------------------------------------------------------------------
// Exact table

std::optional<int> ExactDistanceTable::index_of(const IntFeatures& s) const {
  auto it = index_.find(s);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int ExactDistanceTable::operator()(const IntFeatures& from, const IntFeatures& to) const {
  auto a = index_of(from), b = index_of(to);
  if (!a || !b) throw MetricError("state outside the single-agent graph");
  return at(*a, *b);
}

ExactDistanceTable build_exact_table(const grid::GridSpec& spec, AgentType type) {
  const std::vector<grid::Cell> cells = grid::free_cells(spec);
  const std::uint32_t apples = grid::all_apples_mask(spec);
  ExactDistanceTable t;
  t.type_ = type;
  auto project = [&](grid::Cell c) -> IntFeatures {
    return {c.x, grid::has_feature(type, 1) ? c.y : 0};
  };
  for (grid::Cell c : cells) t.index_.emplace(project(c), 0);
  for (auto& [s, idx] : t.index_) {
    idx = static_cast<int>(t.states_.size());
    t.states_.push_back(s);
  }
  const int n = t.size();
  // A row-only agent's node is its row; its edges are the union over the
  // columns it could physically be in.
  std::vector<std::vector<int>> adj(n);
  for (grid::Cell c : cells) {
    const int from = t.index_.at(project(c));
    for (grid::Action a : grid::legal_actions(type)) {
      const grid::Cell d = grid::move_target(spec, c, a, apples);
      const int to = t.index_.at(project(d));
      if (to != from) adj[from].push_back(to);
    }
  }
  for (auto& v : adj) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  t.dist_.assign(static_cast<std::size_t>(n) * n, -1);
  for (int src = 0; src < n; ++src) {
    int* row = t.dist_.data() + static_cast<std::size_t>(src) * n;
    std::deque<int> q{src};
    row[src] = 0;
    while (!q.empty()) {
      const int u = q.front();
      q.pop_front();
      for (int v : adj[u]) {
        if (row[v] < 0) {
          row[v] = row[u] + 1;
          q.push_back(v);
        }
      }
    }
    for (int j = 0; j < n; ++j) {
      if (row[j] < 0) throw MetricError("single-agent graph is disconnected");
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Learned distance

LearnedDistance::LearnedDistance(const grid::GridSpec& spec, const MetricConfig& cfg) : cfg_(cfg) {
  if (cfg.dim_per_feature < 2 || cfg.dim_per_feature % 2 != 0) {
    throw ConfigError("dim_per_feature must be even and at least 2");
  }
  for (int f : cfg.omit_features) {
    if (f < 0 || f >= F) throw ConfigError("omit_features index out of range");
  }
  std::vector<int> dims{F + 2};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(F * cfg.dim_per_feature);
  encoder_ = nn::Mlp(dims, derive_seed(cfg.seed, "metric/encoder"));
  proj_raw_ = Vector::Zero(F);
  for (int f = 0; f < F; ++f) {
    calib_[f] = 1.0;
    scale_[f] = 1.0 / std::max(spec.feature_extent(f) - 1, 1);
  }
}

bool LearnedDistance::feature_enabled(int f) const {
  return std::find(cfg_.omit_features.begin(), cfg_.omit_features.end(), f) == cfg_.omit_features.end();
}

Vector LearnedDistance::projection_weights() const { return proj_raw_.unaryExpr(&nn::softplus); }

Matrix LearnedDistance::make_input(const Matrix& feats, std::span<const AgentType> types) const {
  if (feats.rows() != F || static_cast<std::size_t>(feats.cols()) != types.size()) {
    throw ShapeError("make_input: expected F x n features with n types");
  }
  Matrix x = Matrix::Zero(F + 2, feats.cols());
  for (Eigen::Index c = 0; c < feats.cols(); ++c) {
    for (int f = 0; f < F; ++f) {
      if (feature_enabled(f)) x(f, c) = feats(f, c) * scale_[f];
    }
    x(F + type_slot(types[c]), c) = 1.0;
  }
  return x;
}

namespace {

Matrix to_col(const Features& s) {
  Matrix m(F, 1);
  for (int f = 0; f < F; ++f) m(f, 0) = s[f];
  return m;
}

void require_trained(const LearnedDistance& d) {
  if (!d.trained()) throw StateError("learned distance has not been trained");
}

}  // namespace

Matrix LearnedDistance::per_feature_batch(const Matrix& src, std::span<const AgentType> types,
                                          const Matrix& goal) const {
  require_trained(*this);
  if (src.cols() != goal.cols()) throw ShapeError("per_feature_batch: source and goal counts differ");
  std::vector<Pair> pairs(src.cols());
  for (int i = 0; i < src.cols(); ++i) pairs[i] = {i, i};
  PairEvaluator ev(*this, true);
  Matrix z = ev.forward(src, types, goal, pairs);
  for (int f = 0; f < F; ++f) z.row(f) *= calib_[f];
  return z;
}

Features LearnedDistance::per_feature(const Features& src, const Features& goal, AgentType type) const {
  const AgentType types[1] = {type};
  Matrix z = per_feature_batch(to_col(src), types, to_col(goal));
  Features out;
  for (int f = 0; f < F; ++f) out[f] = z(f, 0);
  return out;
}

double LearnedDistance::projected(const Features& src, const Features& goal, AgentType type) const {
  require_trained(*this);
  const AgentType types[1] = {type};
  const Pair p[1] = {{0, 0}};
  PairEvaluator ev(*this, true);
  Matrix z = ev.forward(to_col(src), types, to_col(goal), p);
  return projection_weights().dot(z.col(0));
}

double LearnedDistance::summed(const Features& src, const Features& goal, AgentType type) const {
  Features z = per_feature(src, goal, type);
  double s = 0;
  for (double v : z) s += v;
  return s;
}

nlohmann::json LearnedDistance::to_json() const {
  nlohmann::json j;
  j["encoder"] = encoder_.to_json();
  j["projection_raw"] = std::vector<double>(proj_raw_.data(), proj_raw_.data() + proj_raw_.size());
  j["calibration"] = calib_;
  j["feature_scale"] = scale_;
  j["trained"] = trained_;
  j["config"] = {{"hidden", cfg_.hidden},
                 {"dim_per_feature", cfg_.dim_per_feature},
                 {"lr", cfg_.lr},
                 {"batch", cfg_.batch},
                 {"iterations", cfg_.iterations},
                 {"horizon_mean", cfg_.horizon_mean},
                 {"temperature", cfg_.temperature},
                 {"seed", cfg_.seed},
                 {"omit_features", cfg_.omit_features}};
  j["metadata"] = {{"F", F}, {"types", {"row-only", "full"}}};
  return j;
}

LearnedDistance LearnedDistance::from_json(const nlohmann::json& j) {
  LearnedDistance d;
  const auto& c = j.at("config");
  d.cfg_.hidden = c.at("hidden").get<std::vector<int>>();
  d.cfg_.dim_per_feature = c.at("dim_per_feature");
  d.cfg_.lr = c.at("lr");
  d.cfg_.batch = c.at("batch");
  d.cfg_.iterations = c.at("iterations");
  d.cfg_.horizon_mean = c.at("horizon_mean");
  d.cfg_.temperature = c.at("temperature");
  d.cfg_.seed = c.at("seed");
  d.cfg_.omit_features = c.at("omit_features").get<std::vector<int>>();
  d.encoder_ = nn::Mlp::from_json(j.at("encoder"));
  if (j.at("metadata").at("F").get<int>() != F) throw FormatError("distance artifact has a different feature count");
  if (d.encoder_.input_dim() != F + 2 || d.encoder_.output_dim() != F * d.cfg_.dim_per_feature) {
    throw FormatError("distance encoder shape does not match its config");
  }
  const auto pr = j.at("projection_raw").get<std::vector<double>>();
  if (pr.size() != static_cast<std::size_t>(F)) throw FormatError("projection size mismatch");
  d.proj_raw_ = Eigen::Map<const Vector>(pr.data(), F);
  d.calib_ = j.at("calibration").get<Features>();
  d.scale_ = j.at("feature_scale").get<Features>();
  d.trained_ = j.at("trained");
  return d;
}

// ---------------------------------------------------------------------------
// Pair evaluator

PairEvaluator::PairEvaluator(const LearnedDistance& d, bool stop_gradient) : d_(d), tape_(stop_gradient) {}

Matrix PairEvaluator::forward(const Matrix& sources, std::span<const AgentType> src_types, const Matrix& goals,
                              std::span<const Pair> pairs) {
  n_src_ = static_cast<int>(sources.cols());
  n_goals_ = static_cast<int>(goals.cols());
  if (static_cast<std::size_t>(n_src_) != src_types.size()) throw ShapeError("one type per source required");
  pairs_.assign(pairs.begin(), pairs.end());

  // One goal column per distinct (goal, type) combination.
  std::vector<int> col_of(static_cast<std::size_t>(n_goals_) * 2, -1);
  goal_of_col_.clear();
  std::vector<AgentType> goal_types;
  goal_col_of_pair_.resize(pairs_.size());
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    const Pair pr = pairs_[p];
    if (pr.src < 0 || pr.src >= n_src_ || pr.goal < 0 || pr.goal >= n_goals_) throw ShapeError("pair index out of range");
    const AgentType t = src_types[pr.src];
    int& c = col_of[static_cast<std::size_t>(pr.goal) * 2 + type_slot(t)];
    if (c < 0) {
      c = static_cast<int>(goal_of_col_.size());
      goal_of_col_.push_back(pr.goal);
      goal_types.push_back(t);
    }
    goal_col_of_pair_[p] = c;
  }
  n_goal_cols_ = static_cast<int>(goal_of_col_.size());
  Matrix gfeat(F, n_goal_cols_);
  for (int c = 0; c < n_goal_cols_; ++c) gfeat.col(c) = goals.col(goal_of_col_[c]);

  Matrix x(F + 2, n_src_ + n_goal_cols_);
  x.leftCols(n_src_) = d_.make_input(sources, src_types);
  x.rightCols(n_goal_cols_) = d_.make_input(gfeat, goal_types);
  const Matrix e = d_.encoder_.forward(x, tape_);

  const int P = d_.dim_per_feature();
  const int half = P / 2;
  const std::size_t np = pairs_.size();
  Matrix z = Matrix::Zero(F, static_cast<Eigen::Index>(np));
  argmax_.assign(np * F, -1);
  gunit_ = Matrix::Zero(half, static_cast<Eigen::Index>(np * F));
  for (std::size_t p = 0; p < np; ++p) {
    const int a = pairs_[p].src;
    const int b = n_src_ + goal_col_of_pair_[p];
    for (int f = 0; f < F; ++f) {
      if (!d_.feature_enabled(f)) continue;
      const int base = f * P;
      int best = -1;
      double m = 0.0;
      for (int k = 0; k < half; ++k) {
        const double diff = e(base + k, a) - e(base + k, b);
        if (diff > m) {
          m = diff;
          best = k;
        }
      }
      argmax_[p * F + f] = best;
      auto gd = (e.col(a).segment(base + half, half) - e.col(b).segment(base + half, half)).eval();
      const double norm = gd.norm();
      if (norm > 1e-12) gunit_.col(static_cast<Eigen::Index>(p * F + f)) = gd / norm;
      z(f, static_cast<Eigen::Index>(p)) = m + norm;
    }
  }
  return z;
}

void PairEvaluator::backward(const Matrix& dz, Vector* encoder_grad, Matrix* d_sources, Matrix* d_goals) {
  const std::size_t np = pairs_.size();
  if (dz.rows() != F || static_cast<std::size_t>(dz.cols()) != np) throw ShapeError("dz must be F x pairs");
  const int P = d_.dim_per_feature();
  const int half = P / 2;
  Matrix de = Matrix::Zero(F * P, n_src_ + n_goal_cols_);
  for (std::size_t p = 0; p < np; ++p) {
    const int a = pairs_[p].src;
    const int b = n_src_ + goal_col_of_pair_[p];
    for (int f = 0; f < F; ++f) {
      const double g = dz(f, static_cast<Eigen::Index>(p));
      if (g == 0.0) continue;
      const int base = f * P;
      const int k = argmax_[p * F + f];
      if (k >= 0) {
        de(base + k, a) += g;
        de(base + k, b) -= g;
      }
      const auto u = gunit_.col(static_cast<Eigen::Index>(p * F + f));
      de.col(a).segment(base + half, half) += g * u;
      de.col(b).segment(base + half, half) -= g * u;
    }
  }
  Vector scratch;
  Vector& grad = encoder_grad ? *encoder_grad : scratch;
  if (!tape_.stop_gradient() && !encoder_grad) scratch = d_.encoder_.zero_grad();
  const Matrix dx = d_.encoder_.backward(tape_, de, grad);
  const auto& scale = d_.feature_scale();
  if (d_sources) {
    if (d_sources->rows() != F || d_sources->cols() != n_src_) *d_sources = Matrix::Zero(F, n_src_);
    for (int c = 0; c < n_src_; ++c) {
      for (int f = 0; f < F; ++f) {
        if (d_.feature_enabled(f)) (*d_sources)(f, c) += dx(f, c) * scale[f];
      }
    }
  }
  if (d_goals) {
    if (d_goals->rows() != F || d_goals->cols() != n_goals_) *d_goals = Matrix::Zero(F, n_goals_);
    for (int c = 0; c < n_goal_cols_; ++c) {
      for (int f = 0; f < F; ++f) {
        if (d_.feature_enabled(f)) (*d_goals)(f, goal_of_col_[c]) += dx(f, n_src_ + c) * scale[f];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Contrastive training

ContrastiveSampler::ContrastiveSampler(const data::TransitionDataset& ds, double horizon_mean) : ds_(ds) {
  if (ds.transitions.empty()) throw ConfigError("contrastive training needs a nonempty dataset");
  if (horizon_mean < 1.0) throw ConfigError("horizon_mean must be at least 1");
  p_ = 1.0 / horizon_mean;
  episode_end_.resize(ds.size());
  for (auto [b, e] : ds.episodes()) {
    for (std::size_t t = b; t < e; ++t) episode_end_[t] = e;
  }
  if (ds.spec.heterogeneous()) {
    const std::size_t stride = std::max<std::size_t>(1, ds.size() / 5000);
    for (int slot = 0; slot < 2; ++slot) {
      const AgentType own = slot == 0 ? AgentType::kRowOnly : AgentType::kFull;
      for (int f = 0; f < F; ++f) {
        if (grid::has_feature(own, f)) continue;
        for (std::size_t t = 0; t < ds.size(); t += stride) {
          for (int j = 0; j < ds.spec.n_agents; ++j) {
            const AgentType tj = ds.spec.type_of(j);
            if (tj == own || !grid::has_feature(tj, f)) continue;
            foreign_values_[slot][f].push_back(
                grid::single_agent_features(ds.spec, j, ds.transitions[t].state.cells[j])[f]);
          }
        }
      }
    }
  }
}

ContrastiveBatch ContrastiveSampler::sample(int batch, Rng& rng) const {
  ContrastiveBatch b;
  b.anchors.resize(F, batch);
  b.positives.resize(F, batch);
  b.types.resize(batch);
  const int n = ds_.spec.n_agents;
  for (int k = 0; k < batch; ++k) {
    const std::size_t t = uniform_index(rng, ds_.size());
    const int i = static_cast<int>(uniform_index(rng, n));
    std::size_t offset = 1;
    while (uniform01(rng) >= p_) ++offset;
    const std::size_t u = std::min(t + offset - 1, episode_end_[t] - 1);
    const AgentType type = ds_.spec.type_of(i);
    const auto a = grid::single_agent_features(ds_.spec, i, ds_.transitions[t].state.cells[i]);
    auto g = grid::single_agent_features(ds_.spec, i, ds_.transitions[u].next.cells[i]);
    for (int f = 0; f < F; ++f) {
      const auto& pool = foreign_values_[type_slot(type)][f];
      if (!grid::has_feature(type, f) && !pool.empty()) g[f] = pool[uniform_index(rng, pool.size())];
    }
    for (int f = 0; f < F; ++f) {
      b.anchors(f, k) = a[f];
      b.positives(f, k) = g[f];
    }
    b.types[k] = type;
  }
  return b;
}

double infonce_loss(const LearnedDistance& d, const ContrastiveBatch& b, double temperature, Vector* encoder_grad,
                    Vector* proj_grad) {
  const int B = static_cast<int>(b.anchors.cols());
  if (B < 2) throw ConfigError("InfoNCE needs at least two samples per batch");
  std::vector<Pair> pairs;
  pairs.reserve(static_cast<std::size_t>(B) * B);
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < B; ++j) pairs.push_back({i, j});
  }
  const bool want_grad = encoder_grad || proj_grad;
  PairEvaluator ev(d, !encoder_grad);
  const Matrix z = ev.forward(b.anchors, b.types, b.positives, pairs);
  const Vector w = d.projection_weights();
  Matrix logits(B, B);
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < B; ++j) logits(i, j) = -w.dot(z.col(i * B + j)) / temperature;
  }
  // Row-wise (anchor -> positive) and column-wise (positive -> anchor) softmax.
  Matrix prow(B, B), pcol(B, B);
  double loss = 0.0;
  for (int i = 0; i < B; ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    loss += 0.5 * (lse - logits(i, i)) / B;
    prow.row(i) = (logits.row(i).array() - lse).exp();
  }
  for (int j = 0; j < B; ++j) {
    const double m = logits.col(j).maxCoeff();
    const double lse = m + std::log((logits.col(j).array() - m).exp().sum());
    loss += 0.5 * (lse - logits(j, j)) / B;
    pcol.col(j) = (logits.col(j).array() - lse).exp();
  }
  if (!std::isfinite(loss)) throw NumericsError("InfoNCE loss is not finite");
  if (!want_grad) return loss;

  Matrix dlogit = 0.5 / B * (prow + pcol);
  dlogit.diagonal().array() -= 1.0 / B;
  Matrix dz(F, static_cast<Eigen::Index>(pairs.size()));
  Vector du = Vector::Zero(F);
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < B; ++j) {
      const double dd = -dlogit(i, j) / temperature;
      const auto col = z.col(i * B + j);
      dz.col(i * B + j) = dd * w;
      du += dd * col;
    }
  }
  if (proj_grad) {
    for (int f = 0; f < F; ++f) (*proj_grad)(f) += du(f) * nn::sigmoid(d.projection_raw()(f));
  }
  if (encoder_grad) ev.backward(dz, encoder_grad, nullptr, nullptr);
  return loss;
}

LearnedDistance train_learned_distance(const data::TransitionDataset& ds, const MetricConfig& cfg,
                                       const cmi::CmiConfig* cmi_cfg, TrainingLog* log,
                                       cmi::CmiDiagnostics* cmi_diag) {
  if (ds.transitions.empty()) throw ConfigError("dataset is empty");
  if (cfg.batch < 2) throw ConfigError("metric batch must be at least 2");
  LearnedDistance d(ds.spec, cfg);
  ContrastiveSampler sampler(ds, cfg.horizon_mean);
  Rng rng = make_rng(cfg.seed, "metric/batches");
  nn::AdamState adam_enc(d.encoder().parameters().size(), cfg.lr);
  nn::AdamState adam_proj(F, cfg.lr);
  std::optional<cmi::CmiTrainer> cmi_trainer;
  if (cmi_cfg && ds.spec.n_agents >= 2) cmi_trainer.emplace(ds, *cmi_cfg);
  double running = 0.0;
  int running_n = 0;
  for (long it = 0; it < cfg.iterations; ++it) {
    const ContrastiveBatch batch = sampler.sample(cfg.batch, rng);
    Vector g_enc = d.encoder().zero_grad();
    Vector g_proj = Vector::Zero(F);
    const double loss = infonce_loss(d, batch, cfg.temperature, &g_enc, &g_proj);
    if (cmi_trainer) cmi_trainer->step(d, it, g_enc, cmi_diag);
    nn::adam_step(d.encoder().parameters(), g_enc, adam_enc);
    nn::adam_step(d.projection_raw(), g_proj, adam_proj);
    running += loss;
    ++running_n;
    if (log && cfg.log_every > 0 && ((it + 1) % cfg.log_every == 0 || it + 1 == cfg.iterations)) {
      log->iteration.push_back(it + 1);
      log->loss.push_back(running / running_n);
      running = 0.0;
      running_n = 0;
    }
  }
  d.mark_trained();
  calibrate(d, ds);
  return d;
}

void calibrate(LearnedDistance& d, const data::TransitionDataset& ds) {
  constexpr std::size_t kMaxSamples = 4000;
  std::array<std::vector<Features>, F> src, dst;
  std::array<std::vector<AgentType>, F> types;
  const std::size_t stride = std::max<std::size_t>(1, ds.size() / 20000);
  for (std::size_t t = 0; t < ds.size(); t += stride) {
    const auto& tr = ds.transitions[t];
    for (int i = 0; i < ds.spec.n_agents; ++i) {
      const grid::Cell a = tr.state.cells[i], b = tr.next.cells[i];
      const int dx = std::abs(a.x - b.x), dy = std::abs(a.y - b.y);
      int f = -1;
      if (dx == 1 && dy == 0) f = 0;
      if (dx == 0 && dy == 1) f = 1;
      if (f < 0 || src[f].size() >= kMaxSamples) continue;
      src[f].push_back(grid::single_agent_features(ds.spec, i, a));
      dst[f].push_back(grid::single_agent_features(ds.spec, i, b));
      types[f].push_back(ds.spec.type_of(i));
    }
  }
  d.set_calibration(Features{1.0, 1.0});
  Features c{};
  for (int f = 0; f < F; ++f) {
    c[f] = 1.0;
    if (src[f].empty() || !d.feature_enabled(f)) continue;
    const int n = static_cast<int>(src[f].size());
    Matrix s(F, n), g(F, n);
    for (int k = 0; k < n; ++k) {
      for (int q = 0; q < F; ++q) {
        s(q, k) = src[f][k][q];
        g(q, k) = dst[f][k][q];
      }
    }
    const Matrix z = d.per_feature_batch(s, types[f], g);
    const double mean = z.row(f).mean();
    if (mean > 1e-9) c[f] = 1.0 / mean;
  }
  d.set_calibration(c);
}

Features per_feature_distance(const LearnedDistance& d, const Features& s, const Features& fermat, AgentType type) {
  return d.per_feature(s, fermat, type);
}

}  // namespace fopt::metric

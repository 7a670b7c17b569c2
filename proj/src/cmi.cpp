#include "fopt/cmi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace fopt::cmi {

using nn::Matrix;
using nn::Vector;

std::vector<AgentPairTuple> make_pairs(const data::TransitionDataset& ds, std::span<const std::size_t> timesteps) {
  std::vector<AgentPairTuple> out;
  const int n = ds.spec.n_agents;
  if (n < 2) return out;
  out.reserve(timesteps.size() * static_cast<std::size_t>(n * (n - 1) / 2));
  for (std::size_t t : timesteps) {
    if (t >= ds.size()) throw ConfigError("timestep index out of range");
    const auto& cells = ds.transitions[t].state.cells;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        out.push_back({t, i, j, grid::single_agent_features(ds.spec, i, cells[i]),
                       grid::single_agent_features(ds.spec, j, cells[j]), ds.spec.type_of(i)});
      }
    }
  }
  return out;
}

namespace {

void fill_triplet(Matrix& m, Eigen::Index col, const metric::Features& si, const metric::Features& sj,
                  const metric::Features& scale, int f, double z) {
  int r = 0;
  for (int q = 0; q < F; ++q) {
    if (q == f) continue;
    m(r++, col) = si[q] * scale[q];
  }
  for (int q = 0; q < F; ++q) {
    if (q == f) continue;
    m(r++, col) = sj[q] * scale[q];
  }
  m(r++, col) = si[f] * scale[f];
  m(r++, col) = sj[f] * scale[f];
  m(r++, col) = z;
  for (int q = 0; q < F; ++q) m(r++, col) = q == f ? 1.0 : 0.0;
}

}  // namespace

PermutationBatch make_permutation_batch(const std::vector<AgentPairTuple>& pairs, const Matrix& z,
                                        const metric::Features& scale, int k, Rng& rng) {
  const int np = static_cast<int>(pairs.size());
  if (z.rows() != F || z.cols() != np) throw ShapeError("z must be F x pairs");
  PermutationBatch b;
  b.real.resize(kTripletDim, static_cast<Eigen::Index>(F) * np);
  b.k = std::min(k, np - 1);
  for (int f = 0; f < F; ++f) {
    for (int p = 0; p < np; ++p) fill_triplet(b.real, f * np + p, pairs[p].si, pairs[p].sj, scale, f, z(f, p));
  }
  b.fake = b.real;
  if (b.k < 1) return b;
  const int neg = 2 * (F - 1);
  std::vector<std::pair<double, int>> dist(np);
  for (int f = 0; f < F; ++f) {
    // Neighbourhoods live in the conditioning space (s_f(i), s_f(j), z_f),
    // each coordinate standardised over the batch.
    Matrix cond = b.real.block(neg, static_cast<Eigen::Index>(f) * np, 3, np);
    for (int r = 0; r < 3; ++r) {
      const double m = cond.row(r).mean();
      const double sd = std::sqrt((cond.row(r).array() - m).square().mean());
      cond.row(r) = (cond.row(r).array() - m) / (sd > 1e-12 ? sd : 1.0);
    }
    for (int p = 0; p < np; ++p) {
      for (int q = 0; q < np; ++q) dist[q] = {(cond.col(q) - cond.col(p)).squaredNorm(), q};
      dist[p].first = std::numeric_limits<double>::infinity();
      std::partial_sort(dist.begin(), dist.begin() + b.k, dist.end());
      const int pick = dist[uniform_index(rng, static_cast<std::uint64_t>(b.k))].second;
      b.fake.block(0, static_cast<Eigen::Index>(f) * np + p, neg, 1) =
          b.real.block(0, static_cast<Eigen::Index>(f) * np + pick, neg, 1);
    }
  }
  return b;
}

Discriminator::Discriminator(const std::vector<int>& hidden, double lr, std::uint64_t seed) {
  std::vector<int> dims{kTripletDim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  net = nn::Mlp(dims, derive_seed(seed, "cmi/disc-init"));
  adam = nn::AdamState(net.parameters().size(), lr);
}

double discriminator_loss(const PermutationBatch& batch, const Discriminator& D, double* accuracy) {
  const Matrix lr = D.net.forward(batch.real);
  const Matrix lf = D.net.forward(batch.fake);
  const double n = static_cast<double>(lr.cols());
  double loss = 0.0, correct = 0.0;
  for (Eigen::Index c = 0; c < lr.cols(); ++c) {
    loss -= nn::log_sigmoid(lr(0, c)) / n;
    loss -= nn::log_sigmoid(-lf(0, c)) / n;
    correct += (lr(0, c) > 0) + (lf(0, c) <= 0);
  }
  if (accuracy) *accuracy = correct / (2 * n);
  return loss;
}

DiscStepResult discriminator_step(const PermutationBatch& batch, Discriminator& D) {
  DiscStepResult r;
  if (batch.real.cols() == 0 || batch.fake.cols() == 0) {
    r.skipped = true;
    return r;
  }
  bool degenerate = true;
  for (Eigen::Index c = 1; c < batch.real.cols() && degenerate; ++c) {
    degenerate = batch.real.col(c) == batch.real.col(0) && batch.fake.col(c) == batch.fake.col(0);
  }
  if (degenerate && batch.real.cols() > 1) {
    r.skipped = true;
    return r;
  }
  Vector g = D.net.zero_grad();
  r.loss = discriminator_gradient(batch, D, g, &r.accuracy);
  nn::adam_step(D.net.parameters(), g, D.adam);
  return r;
}

double discriminator_gradient(const PermutationBatch& batch, const Discriminator& D, Vector& grad, double* accuracy) {
  nn::GradTape tr, tf;
  const Matrix lr = D.net.forward(batch.real, tr);
  const Matrix lf = D.net.forward(batch.fake, tf);
  const double n = static_cast<double>(lr.cols());
  Matrix dr(1, lr.cols()), df(1, lf.cols());
  double loss = 0.0, correct = 0.0;
  for (Eigen::Index c = 0; c < lr.cols(); ++c) {
    loss -= nn::log_sigmoid(lr(0, c)) / n + nn::log_sigmoid(-lf(0, c)) / n;
    dr(0, c) = (nn::sigmoid(lr(0, c)) - 1.0) / n;
    df(0, c) = nn::sigmoid(lf(0, c)) / n;
    correct += (lr(0, c) > 0) + (lf(0, c) <= 0);
  }
  if (accuracy) *accuracy = correct / (2 * n);
  if (!std::isfinite(loss)) throw NumericsError("discriminator loss is not finite");
  D.net.backward(tr, dr, grad);
  D.net.backward(tf, df, grad);
  return loss;
}

double adversarial_penalty(const PermutationBatch& batch, const Discriminator& D, Matrix* d_real) {
  nn::GradTape tape(true);
  const Matrix l = D.net.forward(batch.real, tape);
  double pen = 0.0;
  Matrix dl(1, l.cols());
  for (Eigen::Index c = 0; c < l.cols(); ++c) {
    pen += nn::log_sigmoid(-l(0, c));
    dl(0, c) = -nn::sigmoid(l(0, c));
  }
  if (d_real) {
    Vector unused;
    *d_real = D.net.backward(tape, dl, unused);
  }
  return pen;
}

CmiTrainer::CmiTrainer(const data::TransitionDataset& ds, const CmiConfig& cfg)
    : ds_(ds),
      cfg_(cfg),
      disc_(cfg.hidden, cfg.lr, cfg.seed),
      batch_rng_(make_rng(cfg.seed, "cmi/batches")),
      knn_rng_(make_rng(cfg.seed, "cmi/knn")) {
  if (cfg.knn < 1) throw ConfigError("cmi knn must be positive");
  if (cfg.timesteps < 1) throw ConfigError("cmi timesteps must be positive");
}

void CmiTrainer::step(const metric::LearnedDistance& d, long iteration, Vector& encoder_grad, CmiDiagnostics* diag) {
  std::vector<std::size_t> ts(cfg_.timesteps);
  for (auto& t : ts) t = uniform_index(batch_rng_, ds_.size());
  const auto pairs = make_pairs(ds_, ts);
  const int np = static_cast<int>(pairs.size());
  Matrix src(F, np), goal(F, np);
  std::vector<grid::AgentType> types(np);
  std::vector<metric::Pair> idx(np);
  for (int p = 0; p < np; ++p) {
    for (int f = 0; f < F; ++f) {
      src(f, p) = pairs[p].si[f];
      goal(f, p) = pairs[p].sj[f];
    }
    types[p] = pairs[p].type_i;
    idx[p] = {p, p};
  }
  const bool apply = cfg_.weight != 0.0;
  metric::PairEvaluator ev(d, !apply);
  const Matrix z = ev.forward(src, types, goal, idx);
  const PermutationBatch batch = make_permutation_batch(pairs, z, d.feature_scale(), cfg_.knn, knn_rng_);
  const DiscStepResult r = discriminator_step(batch, disc_);
  Matrix d_real;
  const double pen = adversarial_penalty(batch, disc_, apply ? &d_real : nullptr);
  if (apply) {
    // Encoder loss gains -weight * penalty.
    Matrix dz(F, np);
    for (int f = 0; f < F; ++f) {
      for (int p = 0; p < np; ++p) dz(f, p) = -cfg_.weight * d_real(kZRow, static_cast<Eigen::Index>(f) * np + p);
    }
    ev.backward(dz, &encoder_grad, nullptr, nullptr);
  }
  acc_loss_ += r.loss;
  acc_accuracy_ += r.accuracy;
  acc_penalty_ += pen;
  acc_skipped_ += r.skipped;
  ++acc_n_;
  if (diag && cfg_.log_every > 0 && (iteration + 1) % cfg_.log_every == 0) {
    diag->rows.push_back({iteration + 1, acc_loss_ / acc_n_, acc_accuracy_ / acc_n_, acc_penalty_ / acc_n_, acc_skipped_});
    acc_loss_ = acc_accuracy_ = acc_penalty_ = 0.0;
    acc_n_ = acc_skipped_ = 0;
  }
}

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

void feature_correlations(const metric::LearnedDistance& d, const grid::GridSpec& spec, grid::AgentType type,
                          CmiDiagnostics& diag) {
  const auto table = metric::build_exact_table(spec, type);
  const int n = table.size();
  const int np = n * n;
  Matrix src(F, np), goal(F, np);
  std::vector<grid::AgentType> types(np, type);
  std::array<std::vector<double>, F> delta;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      const int p = a * n + b;
      for (int f = 0; f < F; ++f) {
        src(f, p) = table.states()[a][f];
        goal(f, p) = table.states()[b][f];
        delta[f].push_back(std::abs(src(f, p) - goal(f, p)));
      }
    }
  }
  const Matrix z = d.per_feature_batch(src, types, goal);
  std::array<std::vector<double>, F> zs;
  for (int f = 0; f < F; ++f) {
    zs[f].resize(np);
    for (int p = 0; p < np; ++p) zs[f][p] = z(f, p);
  }
  diag.feature_corr.assign(F, std::vector<double>(F));
  diag.channel_corr.assign(F, std::vector<double>(F));
  for (int f = 0; f < F; ++f) {
    for (int g = 0; g < F; ++g) {
      diag.feature_corr[f][g] = pearson(zs[f], delta[g]);
      diag.channel_corr[f][g] = pearson(zs[f], zs[g]);
    }
  }
}

DisentanglementReport assess_disentanglement(const CmiDiagnostics& diag, double threshold) {
  DisentanglementReport r;
  if (diag.feature_corr.size() != static_cast<std::size_t>(F)) throw StateError("feature correlations not computed");
  r.own_dominates = true;
  for (int f = 0; f < F; ++f) {
    for (int g = 0; g < F; ++g) {
      if (g != f && std::abs(diag.feature_corr[f][f]) <= std::abs(diag.feature_corr[f][g])) r.own_dominates = false;
      if (g > f) r.max_channel_corr = std::max(r.max_channel_corr, diag.channel_corr[f][g]);
    }
  }
  r.no_collapse = r.max_channel_corr < threshold;
  return r;
}

void CmiDiagnostics::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "iteration,disc_loss,disc_accuracy,penalty,skipped\n";
  for (const Row& r : rows) {
    out << r.iteration << ',' << r.disc_loss << ',' << r.disc_accuracy << ',' << r.penalty << ',' << r.skipped << '\n';
  }
  if (!feature_corr.empty()) {
    out << "\n# corr(z_f, |delta feature g|)\nchannel";
    for (int g = 0; g < F; ++g) out << ",feature" << g;
    out << '\n';
    for (int f = 0; f < F; ++f) {
      out << f;
      for (int g = 0; g < F; ++g) out << ',' << feature_corr[f][g];
      out << '\n';
    }
    out << "\n# corr(z_f, z_g)\nchannel";
    for (int g = 0; g < F; ++g) out << ",channel" << g;
    out << '\n';
    for (int f = 0; f < F; ++f) {
      out << f;
      for (int g = 0; g < F; ++g) out << ',' << channel_corr[f][g];
      out << '\n';
    }
  }
}

MiBoundReport verify_mi_bound(const JointPmf& pmf) {
  const std::size_t n = static_cast<std::size_t>(pmf.na) * pmf.nb * pmf.nc;
  if (pmf.na < 1 || pmf.nb < 1 || pmf.nc < 1 || pmf.p.size() != n) throw DistError("pmf shape mismatch");
  double total = 0.0;
  for (double v : pmf.p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DistError("pmf has a negative or non-finite entry");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DistError("pmf does not sum to one");

  std::vector<double> pa(pmf.na, 0), pb(pmf.nb, 0), pc(pmf.nc, 0);
  std::vector<double> pab(static_cast<std::size_t>(pmf.na) * pmf.nb, 0), pac(static_cast<std::size_t>(pmf.na) * pmf.nc, 0),
      pbc(static_cast<std::size_t>(pmf.nb) * pmf.nc, 0);
  for (int a = 0; a < pmf.na; ++a) {
    for (int b = 0; b < pmf.nb; ++b) {
      for (int c = 0; c < pmf.nc; ++c) {
        const double v = pmf.at(a, b, c);
        pa[a] += v;
        pb[b] += v;
        pc[c] += v;
        pab[a * pmf.nb + b] += v;
        pac[a * pmf.nc + c] += v;
        pbc[b * pmf.nc + c] += v;
      }
    }
  }
  MiBoundReport r;
  for (int a = 0; a < pmf.na; ++a) {
    for (int b = 0; b < pmf.nb; ++b) {
      const double v = pab[a * pmf.nb + b];
      if (v > 0) r.i_ab += v * std::log(v / (pa[a] * pb[b]));
    }
    for (int c = 0; c < pmf.nc; ++c) {
      const double v = pac[a * pmf.nc + c];
      if (v > 0) r.i_ac += v * std::log(v / (pa[a] * pc[c]));
    }
  }
  for (int a = 0; a < pmf.na; ++a) {
    for (int b = 0; b < pmf.nb; ++b) {
      for (int c = 0; c < pmf.nc; ++c) {
        const double v = pmf.at(a, b, c);
        if (v > 0) r.i_ac_given_b += v * std::log(v * pb[b] / (pab[a * pmf.nb + b] * pbc[b * pmf.nc + c]));
      }
    }
  }
  r.holds = r.i_ac <= r.i_ab + r.i_ac_given_b + 1e-12;
  return r;
}

}  // namespace fopt::cmi

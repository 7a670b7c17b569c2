#include "fopt/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "fopt/cmi.hpp"
#include "fopt/fermat.hpp"
#include "fopt/stats.hpp"

namespace fopt::oracles {

using nn::Matrix;
using nn::Vector;

namespace {

constexpr double kStep = 1e-5;

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

Matrix gaussian(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

/// Probes `probes` random entries of `x` (size n) against `analytic`.
GradCheck probe(double* x, std::size_t n, const Vector& analytic, const std::function<double()>& loss, int probes,
                Rng& rng) {
  GradCheck g;
  for (int p = 0; p < probes; ++p) {
    const std::size_t i = uniform_index(rng, n);
    const double keep = x[i];
    x[i] = keep + kStep;
    const double up = loss();
    x[i] = keep - kStep;
    const double down = loss();
    x[i] = keep;
    g.max_rel_err = std::max(g.max_rel_err, rel_err(analytic[static_cast<Eigen::Index>(i)], (up - down) / (2 * kStep)));
    ++g.probes;
  }
  return g;
}

grid::GridSpec mixed_spec() {
  grid::GridSpec spec;
  spec.width = spec.height = 7;
  spec.n_agents = 3;
  spec.agent_types = {grid::AgentType::kRowOnly, grid::AgentType::kFull, grid::AgentType::kFull};
  return spec;
}

metric::LearnedDistance small_distance(std::uint64_t seed) {
  metric::MetricConfig mc;
  mc.hidden = {16, 16};
  mc.dim_per_feature = 4;
  mc.seed = seed;
  metric::LearnedDistance d(mixed_spec(), mc);
  d.set_calibration({1.3, 0.7});
  d.mark_trained();
  return d;
}

}  // namespace

GradCheck gradcheck_mlp(std::uint64_t seed, int probes) {
  Rng rng = make_rng(seed, "oracle/mlp");
  nn::Mlp net({5, 7, 6, 3}, seed);
  const Matrix x = gaussian(5, 4, rng);
  const Matrix w = gaussian(3, 4, rng);
  auto loss = [&] { return (net.forward(x).array() * w.array()).sum(); };
  nn::GradTape tape;
  net.forward(x, tape);
  Vector grad = net.zero_grad();
  net.backward(tape, w, grad);
  return probe(net.parameters().data(), static_cast<std::size_t>(net.parameters().size()), grad, loss, probes, rng);
}

GradCheck gradcheck_pair_evaluator(std::uint64_t seed, int probes) {
  Rng rng = make_rng(seed, "oracle/pairs");
  auto d = small_distance(seed);
  const int n = 6;
  Matrix src(metric::F, n), goal(metric::F, n);
  std::vector<grid::AgentType> types;
  std::vector<metric::Pair> pairs;
  for (int i = 0; i < n; ++i) {
    types.push_back(i % 2 ? grid::AgentType::kFull : grid::AgentType::kRowOnly);
    for (int f = 0; f < metric::F; ++f) {
      src(f, i) = uniform01(rng) * 6.0;
      goal(f, i) = uniform01(rng) * 6.0;
    }
    if (types.back() == grid::AgentType::kRowOnly) src(1, i) = 0.0;
    pairs.push_back({i, (i + 1) % n});
    pairs.push_back({i, i});
  }
  const Matrix w = gaussian(metric::F, static_cast<int>(pairs.size()), rng);
  auto loss = [&] {
    metric::PairEvaluator ev(d, false);
    return (ev.forward(src, types, goal, pairs).array() * w.array()).sum();
  };
  metric::PairEvaluator ev(d, false);
  ev.forward(src, types, goal, pairs);
  Vector grad = d.encoder().zero_grad();
  ev.backward(w, &grad, nullptr, nullptr);
  auto& theta = d.encoder().parameters();
  return probe(theta.data(), static_cast<std::size_t>(theta.size()), grad, loss, probes, rng);
}

GradCheck gradcheck_discriminator(std::uint64_t seed, int probes) {
  Rng rng = make_rng(seed, "oracle/disc");
  cmi::Discriminator D({16, 16}, 1e-3, seed);
  cmi::PermutationBatch batch;
  batch.real = gaussian(cmi::kTripletDim, 12, rng);
  batch.fake = gaussian(cmi::kTripletDim, 12, rng);
  auto loss = [&] { return cmi::discriminator_loss(batch, D); };
  Vector grad = D.net.zero_grad();
  cmi::discriminator_gradient(batch, D, grad);
  auto& theta = D.net.parameters();
  return probe(theta.data(), static_cast<std::size_t>(theta.size()), grad, loss, probes, rng);
}

GradCheck gradcheck_penalty_inputs(std::uint64_t seed, int probes) {
  Rng rng = make_rng(seed, "oracle/penalty");
  cmi::Discriminator D({16, 16}, 1e-3, seed);
  cmi::PermutationBatch batch;
  batch.real = gaussian(cmi::kTripletDim, 12, rng);
  batch.fake = batch.real;
  auto loss = [&] { return cmi::adversarial_penalty(batch, D); };
  Matrix d_real;
  cmi::adversarial_penalty(batch, D, &d_real);
  const Vector flat = Eigen::Map<const Vector>(d_real.data(), d_real.size());
  return probe(batch.real.data(), static_cast<std::size_t>(batch.real.size()), flat, loss, probes, rng);
}

GradCheck gradcheck_fermat_loss(std::uint64_t seed, int probes) {
  Rng rng = make_rng(seed, "oracle/fermat");
  const auto spec = mixed_spec();
  const auto d = small_distance(seed);
  fermat::FermatConfig fc;
  fc.hidden = {16, 16};
  fc.seed = seed;
  fermat::FermatEncoder phi(spec, fc);
  std::vector<grid::FactoredState> states;
  for (int i = 0; i < 8; ++i) states.push_back(grid::factorize(grid::reset(spec, derive_seed(seed, std::to_string(i))), spec));
  auto loss = [&] { return fermat::fermat_loss(phi, d, states, 1.0, nullptr); };
  Vector grad = phi.net().zero_grad();
  fermat::fermat_loss(phi, d, states, 1.0, &grad);
  auto& theta = phi.net().parameters();
  return probe(theta.data(), static_cast<std::size_t>(theta.size()), grad, loss, probes, rng);
}

bool stop_gradient_bitwise(std::uint64_t seed) {
  auto d = small_distance(seed);
  Rng rng = make_rng(seed, "oracle/stopgrad");
  Matrix src = gaussian(metric::F, 3, rng).cwiseAbs(), goal = gaussian(metric::F, 3, rng).cwiseAbs();
  std::vector<grid::AgentType> types(3, grid::AgentType::kFull);
  std::vector<metric::Pair> pairs = {{0, 1}, {1, 2}, {2, 0}};
  metric::PairEvaluator ev(d, true);
  const Matrix z = ev.forward(src, types, goal, pairs);
  Vector grad = d.encoder().zero_grad();
  Matrix dsrc, dgoal;
  ev.backward(Matrix::Ones(z.rows(), z.cols()), &grad, &dsrc, &dgoal);
  if (grad.cwiseAbs().maxCoeff() != 0.0) return false;

  const std::string before = d.to_json().dump();
  const auto ds = data::collect_dataset(mixed_spec(), {}, 500, seed);
  fermat::FermatConfig fc;
  fc.hidden = {16, 16};
  fc.iterations = 20;
  fc.batch = 16;
  fc.seed = seed;
  fermat::train_fermat_encoder(ds, d, fc);
  return d.to_json().dump() == before;
}

namespace {
double spectrum_error(const spectral::AbstractGraph& g, const std::vector<double>& expected) {
  const auto b = spectral::eigendecompose(g, static_cast<int>(expected.size()) - 1);
  double err = std::max(b.residual, b.orthonormality);
  for (std::size_t i = 0; i < expected.size(); ++i)
    err = std::max(err, std::abs(b.eigenvalues(static_cast<Eigen::Index>(i)) - expected[i]));
  return err;
}
}  // namespace

double path_p3_error() { return spectrum_error(spectral::graph_from_edges(3, {{0, 1}, {1, 2}}), {0.0, 1.0, 3.0}); }

double complete_k3_error() {
  return spectrum_error(spectral::graph_from_edges(3, {{0, 1}, {1, 2}, {0, 2}}), {0.0, 3.0, 3.0});
}

MiSuite mi_suite(int n_random, std::uint64_t seed) {
  MiSuite m;
  Rng rng = make_rng(seed, "oracle/mi");
  for (int r = 0; r < n_random; ++r) {
    cmi::JointPmf pmf;
    pmf.na = 2 + static_cast<int>(uniform_index(rng, 3));
    pmf.nb = 2 + static_cast<int>(uniform_index(rng, 3));
    pmf.nc = 2 + static_cast<int>(uniform_index(rng, 3));
    pmf.p.resize(static_cast<std::size_t>(pmf.na) * pmf.nb * pmf.nc);
    double total = 0.0;
    for (auto& v : pmf.p) {
      // Sparse entries now and then so near-deterministic pmfs are covered.
      v = uniform01(rng) < 0.2 ? 0.0 : -std::log(1.0 - uniform01(rng));
      total += v;
    }
    if (total == 0.0) {
      pmf.p[0] = 1.0;
      total = 1.0;
    }
    for (auto& v : pmf.p) v /= total;
    ++m.random_pmfs;
    if (cmi::verify_mi_bound(pmf).holds) ++m.holds;
  }
  // C copies A, B independent uniform: I(A;C) = ln 3, I(A;B) = 0, I(A;C|B) = ln 3.
  {
    cmi::JointPmf pmf{3, 2, 3, std::vector<double>(18, 0.0)};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 2; ++b) pmf.p[(a * 2 + b) * 3 + a] = 1.0 / 6.0;
    const auto r = cmi::verify_mi_bound(pmf);
    m.copy_edge = r.holds && std::abs(r.i_ac - std::log(3.0)) < 1e-12 && std::abs(r.i_ab) < 1e-12 &&
                  std::abs(r.i_ac_given_b - std::log(3.0)) < 1e-12;
  }
  // Full independence: all three terms vanish.
  {
    const double pa[] = {0.2, 0.8}, pb[] = {0.5, 0.3, 0.2}, pc[] = {0.6, 0.4};
    cmi::JointPmf pmf{2, 3, 2, std::vector<double>(12, 0.0)};
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 2; ++c) pmf.p[(a * 3 + b) * 2 + c] = pa[a] * pb[b] * pc[c];
    const auto r = cmi::verify_mi_bound(pmf);
    m.independence_edge = r.holds && std::abs(r.i_ac) < 1e-12 && std::abs(r.i_ab) < 1e-12 &&
                          std::abs(r.i_ac_given_b) < 1e-12;
  }
  return m;
}

VoteTable vote_truth_table(int max_agents, int n_options) {
  VoteTable t;
  const int n_ids = macdec::kFirstOption + n_options;
  for (int n = 1; n <= max_agents; ++n) {
    for (int mixed = 0; mixed < 2; ++mixed) {
      grid::GridSpec spec;
      spec.n_agents = n;
      spec.agent_types.assign(n, grid::AgentType::kFull);
      if (mixed) spec.agent_types[0] = grid::AgentType::kRowOnly;
      std::vector<int> sel(n, 0);
      long total = 1;
      for (int i = 0; i < n; ++i) total *= n_ids;
      for (long code = 0; code < total; ++code) {
        long c = code;
        for (int i = 0; i < n; ++i) {
          sel[i] = static_cast<int>(c % n_ids);
          c /= n_ids;
        }
        ++t.cases;
        // Restated rule: any illegal primitive rejects the vote; otherwise an
        // option runs iff every agent names it; otherwise option voters idle.
        bool illegal = false;
        for (int i = 0; i < n; ++i) {
          if (sel[i] < macdec::kFirstOption &&
              !grid::is_legal(spec.agent_types[i], static_cast<grid::Action>(sel[i])))
            illegal = true;
        }
        if (illegal) {
          try {
            macdec::resolve_votes(sel, n_options, spec);
            ++t.mismatches;
          } catch (const ActionError&) {
            ++t.illegal_rejected;
          }
          continue;
        }
        const auto p = macdec::resolve_votes(sel, n_options, spec);
        bool same = sel[0] >= macdec::kFirstOption;
        for (int i = 1; i < n; ++i) same = same && sel[i] == sel[0];
        const int want_option = same ? sel[0] - macdec::kFirstOption : -1;
        bool ok = p.option == want_option && static_cast<int>(p.primitives.size()) == n &&
                  static_cast<int>(p.failed_vote.size()) == n;
        for (int i = 0; ok && i < n; ++i) {
          const bool voted = sel[i] >= macdec::kFirstOption;
          const auto want_prim = voted ? grid::Action::kNoop : static_cast<grid::Action>(sel[i]);
          ok = p.failed_vote[i] == (voted && !same) && (same || p.primitives[i] == want_prim);
        }
        if (!ok) ++t.mismatches;
      }
    }
  }
  return t;
}

double telescoping_gap(const std::vector<options::Rollout>& rollouts, const options::IntrinsicRewardSpec& reward) {
  double gap = 0.0;
  for (const auto& ro : rollouts) {
    double sum = 0.0;
    for (double r : ro.rewards) sum += r;
    const double want = reward.sign * (reward.value(ro.states.back()) - reward.value(ro.states.front()));
    gap = std::max(gap, std::abs(sum - want));
  }
  return gap;
}

bool zero_option_identity(const grid::GridSpec& spec, macdec::DownstreamConfig cfg) {
  cfg.interruption = false;
  const macdec::OptionLibrary empty;
  const auto a = macdec::train_downstream(spec, empty, cfg);
  const auto b = macdec::train_flat_iql(spec, cfg);
  if (!(a.q == b.q) || a.curve.size() != b.curve.size()) return false;
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    if (a.curve[i].step != b.curve[i].step || a.curve[i].fraction != b.curve[i].fraction ||
        a.curve[i].ret != b.curve[i].ret)
      return false;
  }
  return a.macro_decisions == cfg.steps;
}

bool iqm_identity() {
  for (int n : {1, 4, 5, 10}) {
    std::vector<double> x(n, 0.375);
    if (stats::iqm(x) != 0.375) return false;
    const auto ci = stats::bootstrap_iqm(x, 1000, 0.95, 1);
    if (ci.lo != 0.375 || ci.hi != 0.375) return false;
  }
  return true;
}

std::vector<Check> core_suite(std::uint64_t seed) {
  std::vector<Check> out;
  auto add_grad = [&](const std::string& name, const GradCheck& g) {
    out.push_back({name, g.ok(), "probes " + std::to_string(g.probes) + " max rel err " + std::to_string(g.max_rel_err)});
  };
  add_grad("gradcheck mlp", gradcheck_mlp(seed));
  add_grad("gradcheck pair evaluator", gradcheck_pair_evaluator(seed));
  add_grad("gradcheck discriminator", gradcheck_discriminator(seed));
  add_grad("gradcheck penalty inputs", gradcheck_penalty_inputs(seed));
  add_grad("gradcheck fermat loss", gradcheck_fermat_loss(seed));
  out.push_back({"stop-gradient bitwise", stop_gradient_bitwise(seed), ""});
  const double p3 = path_p3_error(), k3 = complete_k3_error();
  out.push_back({"P3 spectrum", p3 <= 1e-10, "err " + std::to_string(p3)});
  out.push_back({"K3 spectrum", k3 <= 1e-10, "err " + std::to_string(k3)});
  const auto mi = mi_suite(1000, seed);
  out.push_back({"MI bound", mi.ok(), std::to_string(mi.holds) + "/" + std::to_string(mi.random_pmfs)});
  const auto votes = vote_truth_table(4, 2);
  out.push_back({"vote truth table", votes.ok(),
                 std::to_string(votes.cases) + " cases, " + std::to_string(votes.mismatches) + " mismatches"});
  out.push_back({"IQM identity", iqm_identity(), ""});
  grid::GridSpec small;
  small.width = small.height = 5;
  small.n_agents = 2;
  small.apples = {{{2, 2}, 1}};
  macdec::DownstreamConfig dc;
  dc.steps = 3000;
  dc.checkpoints = 3;
  dc.eval_episodes = 4;
  dc.seed = seed;
  out.push_back({"zero-option identity", zero_option_identity(small, dc), ""});
  return out;
}

}  // namespace fopt::oracles

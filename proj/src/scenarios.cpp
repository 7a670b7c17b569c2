#include "fopt/scenarios.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fopt::scenarios {

config::PipelineConfig scenario_10x10_2ag() { return config::preset("hetero-2ag"); }
config::PipelineConfig scenario_15x15_3ag() { return config::preset("hetero-3ag"); }

double RolloutStats::mean_offset(int f) const {
  double s = 0.0;
  for (const auto& o : offsets) s += o[f];
  return offsets.empty() ? 0.0 : s / static_cast<double>(offsets.size());
}

namespace {
template <class T>
double mean_of(const std::vector<T>& v, bool absolute) {
  double s = 0.0;
  for (T x : v) s += absolute ? std::abs(static_cast<double>(x)) : static_cast<double>(x);
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}
}  // namespace

double RolloutStats::mean_abs_dx() const { return mean_of(dx, true); }
double RolloutStats::mean_dy_pair() const { return mean_of(dy_pair, true); }
double RolloutStats::mean_x_range() const { return mean_of(x_range, false); }

RolloutStats measure_option(const options::JointOption& o, const options::OptionKeyer& keyer,
                            const grid::GridSpec& spec, const fermat::RelativeAbstraction& abs, int rollouts,
                            std::uint64_t seed, std::array<int, 2> dx_agents, std::array<int, 2> pair) {
  RolloutStats st;
  st.option_id = o.id;
  st.k = o.eigen_index;
  st.sign = o.sign;
  st.rollouts = rollouts;
  for (int r = 0; r < rollouts; ++r) {
    const auto s0 = grid::reset(spec, derive_seed(seed, "scenario/rollout/" + std::to_string(r)));
    const auto ro = options::rollout_option(o, keyer, spec, s0);
    for (std::size_t t = 1; t < ro.states.size(); ++t) {
      for (int i = 0; i < spec.n_agents; ++i) {
        if (spec.type_of(i) == grid::AgentType::kRowOnly && ro.states[t].cells[i].y != s0.cells[i].y)
          st.padded_moved = true;
      }
    }
    const auto& fin = ro.states.back();
    st.offsets.push_back(options::fermat_offsets(spec, fin, abs.representation(fin).fermat));
    st.dx.push_back(fin.cells[dx_agents[1]].x - fin.cells[dx_agents[0]].x);
    st.dy_pair.push_back(pair[0] >= 0 ? std::abs(fin.cells[pair[0]].y - fin.cells[pair[1]].y) : 0);
    int lo = spec.height, hi = -1;
    for (auto c : fin.cells) {
      lo = std::min(lo, c.x);
      hi = std::max(hi, c.x);
    }
    st.x_range.push_back(hi - lo);
  }
  return st;
}

double padding_sensitivity(const metric::LearnedDistance& d, const grid::GridSpec& spec) {
  double worst = 0.0;
  for (int x = 0; x < spec.height; ++x) {
    const metric::Features src{static_cast<double>(x), 0.0};
    for (int gx = 0; gx < spec.height; ++gx) {
      double lo = 1e300, hi = -1e300;
      for (int gy = 0; gy < spec.width; ++gy) {
        const double v = d.summed(src, {static_cast<double>(gx), static_cast<double>(gy)}, grid::AgentType::kRowOnly);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      worst = std::max(worst, hi - lo);
    }
  }
  return worst;
}

double perspective_gap(const spectral::SpectralBasis& b, int k, const fermat::Abstraction& abs,
                       const grid::GridSpec& spec) {
  if (spec.n_agents != 2) throw ConfigError("perspective_gap needs a two-agent team");
  const int t1 = spec.type_of(0) == grid::AgentType::kRowOnly ? 0 : 1;
  const int t2 = 1 - t1;
  const int col = spec.width / 2, mid = spec.height / 2;
  std::vector<double> a, c;
  for (int dx = -mid; dx + mid < spec.height; ++dx) {
    grid::JointState s;
    s.cells.resize(2);
    s.apples = grid::all_apples_mask(spec);
    // Perspective of the Type-1 agent: it moves, the Type-2 agent stays at (mid, col).
    s.cells[t1] = {mid + dx, 0};
    s.cells[t2] = {mid, col};
    a.push_back(b.value(k, abs.key(s)));
    // Perspective of the Type-2 agent.
    s.cells[t1] = {mid, 0};
    s.cells[t2] = {mid + dx, col};
    c.push_back(b.value(k, abs.key(s)));
  }
  const double dot = std::inner_product(a.begin(), a.end(), c.begin(), 0.0);
  const double sgn = dot < 0 ? -1.0 : 1.0;
  double gap = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) gap = std::max(gap, std::abs(a[i] - sgn * c[i]));
  return gap;
}

}  // namespace fopt::scenarios

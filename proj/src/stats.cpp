#include "fopt/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fopt/common.hpp"

namespace fopt::stats {

double mean(std::span<const double> x) {
  if (x.empty()) throw ConfigError("mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ConfigError("pearson needs two equal samples of size >= 2");
  const double ma = mean(a), mb = mean(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = ranks(a), rb = ranks(b);
  return pearson(ra, rb);
}

double iqm(std::span<const double> x) {
  if (x.empty()) throw ConfigError("iqm of an empty sample");
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  const std::size_t cut = s.size() / 4;
  return mean(std::span<const double>(s).subspan(cut, s.size() - 2 * cut));
}

Interval bootstrap_iqm(std::span<const double> x, int resamples, double level, std::uint64_t seed) {
  if (resamples < 1) throw ConfigError("bootstrap needs at least one resample");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  Interval r;
  r.point = iqm(x);
  Rng rng = make_rng(seed, "stats/bootstrap");
  std::vector<double> stats(resamples), sample(x.size());
  for (int b = 0; b < resamples; ++b) {
    for (auto& v : sample) v = x[uniform_index(rng, x.size())];
    stats[b] = iqm(sample);
  }
  std::sort(stats.begin(), stats.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(resamples - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, stats.size() - 1);
    return stats[lo] + (pos - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
  };
  r.lo = quantile((1.0 - level) / 2.0);
  r.hi = quantile(1.0 - (1.0 - level) / 2.0);
  return r;
}

}  // namespace fopt::stats

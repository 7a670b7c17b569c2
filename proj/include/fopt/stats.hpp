#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fopt::stats {

double mean(std::span<const double> x);
double pearson(std::span<const double> a, std::span<const double> b);
/// Average ranks for ties.
std::vector<double> ranks(std::span<const double> x);
double spearman(std::span<const double> a, std::span<const double> b);

/// Interquartile mean: drops floor(n/4) values from each end of the sorted
/// sample and averages the rest.
double iqm(std::span<const double> x);

struct Interval {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool overlaps(const Interval& o) const { return lo <= o.hi && o.lo <= hi; }
};

/// Percentile bootstrap of the IQM.
Interval bootstrap_iqm(std::span<const double> x, int resamples, double level, std::uint64_t seed);

}  // namespace fopt::stats

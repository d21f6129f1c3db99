#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace superlab::stats {

struct Interval {
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double se = 0.0;  // bootstrap standard deviation
};

double mean(const std::vector<double>& x);
double sample_variance(const std::vector<double>& x);

// Percentile bootstrap of an arbitrary statistic on resampled index sets.
Interval bootstrap(std::size_t n, const std::function<double(const std::vector<std::size_t>&)>& stat,
                   int resamples, std::uint64_t seed, double level = 0.95);

Interval bootstrap_mean(const std::vector<double>& x, int resamples, std::uint64_t seed,
                        double level = 0.95);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double r2 = 0.0;
};

LineFit ols(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace superlab::stats

#include "superlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "superlab/rng.hpp"

namespace superlab::stats {

double mean(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("mean of empty sample");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double sample_variance(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

static double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, v.size() - 1);
  const double w = pos - static_cast<double>(i);
  return (1.0 - w) * v[i] + w * v[j];
}

Interval bootstrap(std::size_t n, const std::function<double(const std::vector<std::size_t>&)>& stat,
                   int resamples, std::uint64_t seed, double level) {
  if (n == 0) throw std::invalid_argument("bootstrap of empty sample");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Interval out;
  out.estimate = stat(idx);
  rng::Stream stream(rng::hash({seed, 0xb007ULL}));
  std::vector<double> reps(static_cast<std::size_t>(resamples));
  std::uint64_t counter = 0;
  for (int b = 0; b < resamples; ++b) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = stream.below(counter++, n);
    reps[static_cast<std::size_t>(b)] = stat(idx);
  }
  const double m = mean(reps);
  double s2 = 0.0;
  for (double r : reps) s2 += (r - m) * (r - m);
  out.se = resamples > 1 ? std::sqrt(s2 / (resamples - 1)) : 0.0;
  std::sort(reps.begin(), reps.end());
  const double a = 0.5 * (1.0 - level);
  out.lo = quantile_sorted(reps, a);
  out.hi = quantile_sorted(reps, 1.0 - a);
  return out;
}

Interval bootstrap_mean(const std::vector<double>& x, int resamples, std::uint64_t seed, double level) {
  return bootstrap(
      x.size(),
      [&](const std::vector<std::size_t>& idx) {
        double s = 0.0;
        for (std::size_t i : idx) s += x[i];
        return s / static_cast<double>(idx.size());
      },
      resamples, seed, level);
}

LineFit ols(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("ols needs >= 2 paired points");
  const double n = static_cast<double>(x.size());
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0) throw std::invalid_argument("ols with degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    rss += r * r;
  }
  f.slope_se = n > 2 ? std::sqrt(rss / (n - 2) / sxx) : 0.0;
  f.r2 = syy > 0.0 ? 1.0 - rss / syy : 1.0;
  return f;
}

}  // namespace superlab::stats

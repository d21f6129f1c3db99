#include "superlab/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "superlab/rng.hpp"

namespace superlab::grid {

bool TriadicCube::contains(Vec2 x) const {
  const double h = 0.5 * side();
  return std::abs(x[0] - center[0]) < h && std::abs(x[1] - center[1]) < h;
}

std::vector<TriadicCube> TriadicCube::children() const {
  std::vector<TriadicCube> out;
  const double s = pow3(static_cast<double>(level - 1));
  for (int b = -1; b <= 1; ++b)
    for (int a = -1; a <= 1; ++a) out.push_back({level - 1, {center[0] + a * s, center[1] + b * s}});
  return out;
}

GridFunction::GridFunction(TriadicCube cube, int r, double fill) : cube_(cube), r_(r) {
  if (r < 0) throw InputError("resolution exponent must be nonnegative");
  n_ = static_cast<int>(ipow3(r));
  v_.assign(static_cast<std::size_t>(n_) * n_, fill);
}

Vec2 GridFunction::cell_center(int i, int j) const {
  const double hh = h();
  const double lo = -0.5 * cube_.side();
  return {cube_.center[0] + lo + (i + 0.5) * hh, cube_.center[1] + lo + (j + 0.5) * hh};
}

void GridFunction::check_finite() const {
  for (double v : v_)
    if (!std::isfinite(v)) throw InputError("grid function has non-finite values");
}

double GridFunction::mean() const {
  double s = 0.0;
  for (double v : v_) s += v;
  return s / static_cast<double>(v_.size());
}

GridFunction GridFunction::sub_block(int i0, int j0, int rs) const {
  const int w = static_cast<int>(ipow3(rs));
  if (i0 < 0 || j0 < 0 || i0 + w > n_ || j0 + w > n_) throw InputError("sub-block outside grid");
  const double hh = h();
  const Vec2 lo = cell_center(i0, j0);
  TriadicCube c{cube_.level - (r_ - rs), {lo[0] + 0.5 * (w - 1) * hh, lo[1] + 0.5 * (w - 1) * hh}};
  GridFunction out(c, rs);
  for (int j = 0; j < w; ++j)
    for (int i = 0; i < w; ++i) out(i, j) = (*this)(i0 + i, j0 + j);
  return out;
}

GridFunction triadic_average(const GridFunction& f, int l) {
  if (l < 0 || l > f.r()) throw InputError("averaging level out of range");
  GridFunction out(f.cube(), l);
  const int w = static_cast<int>(ipow3(f.r() - l));
  const double inv = 1.0 / (static_cast<double>(w) * w);
  for (int J = 0; J < out.n(); ++J)
    for (int I = 0; I < out.n(); ++I) {
      double s = 0.0;
      for (int j = 0; j < w; ++j)
        for (int i = 0; i < w; ++i) s += f(I * w + i, J * w + j);
      out(I, J) = s * inv;
    }
  return out;
}

namespace {

void check_exponents(double s, double p, double q, bool allow_s_zero = false) {
  if (!(s > 0.0 || (allow_s_zero && s == 0.0)) || s > 1.0) throw InputError("order s must lie in (0, 1]");
  if (!(p >= 1.0) || !std::isfinite(p)) throw InputError("exponent p must lie in [1, inf)");
  if (!(q >= 1.0) || !std::isfinite(q)) throw InputError("exponent q must lie in [1, inf)");
}

// mean over the w x w window with lower-left cell (i0, j0) of |f - window mean|^p
// offsets from a corner sample keep constants at exactly zero
double window_oscillation(const GridFunction& f, int i0, int j0, int w, double p) {
  const double ref = f(i0, j0);
  double mean = 0.0;
  for (int j = 0; j < w; ++j)
    for (int i = 0; i < w; ++i) mean += f(i0 + i, j0 + j) - ref;
  mean /= static_cast<double>(w) * w;
  double acc = 0.0;
  for (int j = 0; j < w; ++j)
    for (int i = 0; i < w; ++i) acc += std::pow(std::abs(f(i0 + i, j0 + j) - ref - mean), p);
  return acc / (static_cast<double>(w) * w);
}

}  // namespace

double besov_seminorm(const GridFunction& f, double s, double p, double q) {
  check_exponents(s, p, q);
  if (f.r() < 2) throw InputError("besov seminorm needs resolution exponent >= 2");
  const int m = f.cube().level, r = f.r(), N = f.n();
  const int mid = (N - 1) / 2;
  double total = 0.0;
  for (int n = m - r + 1; n <= m; ++n) {
    const int w = static_cast<int>(ipow3(n - m + r));
    const int shift = w / 3;
    const int half = (w - 1) / 2;
    const int kmax = (mid - half) / shift;
    double acc = 0.0;
    long count = 0;
    for (int kb = -kmax; kb <= kmax; ++kb)
      for (int ka = -kmax; ka <= kmax; ++ka) {
        const int ci = mid + ka * shift, cj = mid + kb * shift;
        acc += window_oscillation(f, ci - half, cj - half, w, p);
        ++count;
      }
    total += pow3(-n * s * q) * std::pow(acc / static_cast<double>(count), q / p);
  }
  return std::pow(total, 1.0 / q);
}

double neg_besov_seminorm(const GridFunction& f, double s, double p, double q) {
  check_exponents(s, p, q);
  const int m = f.cube().level, r = f.r();
  double total = 0.0;
  for (int l = r; l >= 0; --l) {
    const GridFunction avg = triadic_average(f, l);
    const int n = m - l;
    double acc = 0.0;
    for (double v : avg.values()) acc += std::pow(std::abs(v), p);
    acc /= static_cast<double>(avg.values().size());
    total += pow3(s * q * n) * std::pow(acc, q / p);
  }
  return std::pow(total, 1.0 / q);
}

double holder_seminorm_window(const GridFunction& f, double alpha, int i0, int i1, int j0, int j1,
                              const HolderOptions& opt) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in (0, 1]");
  if (f.n() < 2) throw InputError("holder seminorm needs at least 2 points per side");
  const int wi = i1 - i0, wj = j1 - j0;
  if (wi < 1 || wj < 1 || i0 < 0 || j0 < 0 || i1 > f.n() || j1 > f.n()) throw InputError("bad window");
  const long npts = static_cast<long>(wi) * wj;
  const double h = f.h();
  auto quotient = [&](long a, long b) {
    const int ai = i0 + static_cast<int>(a % wi), aj = j0 + static_cast<int>(a / wi);
    const int bi = i0 + static_cast<int>(b % wi), bj = j0 + static_cast<int>(b / wi);
    const double d = h * std::hypot(static_cast<double>(ai - bi), static_cast<double>(aj - bj));
    return std::abs(f(ai, aj) - f(bi, bj)) / std::pow(d, alpha);
  };
  double best = 0.0;
  if (std::max(wi, wj) <= opt.exact_threshold) {
#pragma omp parallel for reduction(max : best) schedule(static)
    for (long a = 0; a < npts; ++a)
      for (long b = a + 1; b < npts; ++b) best = std::max(best, quotient(a, b));
    return best;
  }
  const rng::Stream stream(rng::hash({opt.seed, 0x401dULL}));
#pragma omp parallel for reduction(max : best) schedule(static)
  for (long a = 0; a < npts; ++a) {
    const int ai = static_cast<int>(a % wi), aj = static_cast<int>(a / wi);
    for (int di = -1; di <= 1; ++di)
      for (int dj = -1; dj <= 1; ++dj) {
        const int bi = ai + di, bj = aj + dj;
        if ((di || dj) && bi >= 0 && bj >= 0 && bi < wi && bj < wj) best = std::max(best, quotient(a, bj * static_cast<long>(wi) + bi));
      }
    for (int k = 0; k < opt.anchors; ++k) {
      const long b = static_cast<long>(stream.below(static_cast<std::uint64_t>(a) * opt.anchors + k, static_cast<std::uint64_t>(npts)));
      if (b != a) best = std::max(best, quotient(a, b));
    }
  }
  return best;
}

double holder_seminorm(const GridFunction& f, double alpha, const HolderOptions& opt) {
  return holder_seminorm_window(f, alpha, 0, f.n(), 0, f.n(), opt);
}

void write_csv(const GridFunction& f, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "# cube_level,cube_cx,cube_cy,resolution\n" << std::setprecision(17);
  out << f.cube().level << ',' << f.cube().center[0] << ',' << f.cube().center[1] << ',' << f.n() << '\n';
  for (int j = 0; j < f.n(); ++j) {
    for (int i = 0; i < f.n(); ++i) out << (i ? "," : "") << f(i, j);
    out << '\n';
  }
}

GridFunction read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("# cube_level", 0) != 0) throw InputError("missing grid header in " + path);
  std::getline(in, line);
  std::replace(line.begin(), line.end(), ',', ' ');
  std::istringstream hs(line);
  int level = 0, n = 0;
  double cx = 0.0, cy = 0.0;
  hs >> level >> cx >> cy >> n;
  int r = 0;
  while (ipow3(r) < n) ++r;
  if (ipow3(r) != n) throw InputError("resolution is not a power of 3");
  GridFunction f({level, {cx, cy}}, r);
  for (int j = 0; j < n; ++j) {
    if (!std::getline(in, line)) throw InputError("truncated grid file");
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream rs(line);
    for (int i = 0; i < n; ++i)
      if (!(rs >> f(i, j))) throw InputError("bad grid row");
  }
  f.check_finite();
  return f;
}

}  // namespace superlab::grid

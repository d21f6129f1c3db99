#include "superlab/solver.hpp"

#include <fftw3.h>

#include <Eigen/CholmodSupport>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>

namespace superlab::solver {

using grid::GridFunction;
using grid::TriadicCube;

// ---------------------------------------------------------------- coefficients

Vec2 CoefficientGrid::vertex(int a, int b) const {
  const double hh = h();
  const double lo = -0.5 * cube.side();
  return {cube.center[0] + lo + a * hh, cube.center[1] + lo + b * hh};
}

void CoefficientGrid::validate() const {
  if (n != static_cast<int>(ipow3(r))) throw InputError("coefficient grid size is not 3^r");
  if (!(nu > 0.0) || !std::isfinite(nu)) throw InputError("nu must be positive");
  const std::size_t nv = static_cast<std::size_t>(n + 1) * (n + 1);
  if (kappa.size() != nv) throw InputError("kappa array has wrong size");
  for (double k : kappa)
    if (!std::isfinite(k)) throw InputError("kappa contains NaN or infinity");
  if (!nu_vertex.empty()) {
    if (nu_vertex.size() != nv) throw InputError("nu array has wrong size");
    for (double v : nu_vertex)
      if (!(v > 0.0) || !std::isfinite(v)) throw InputError("nu field must be positive and finite");
  }
}

CoefficientGrid constant_coefficients(TriadicCube cube, int r, double nu, double kappa0) {
  CoefficientGrid c;
  c.cube = cube;
  c.r = r;
  c.n = static_cast<int>(ipow3(r));
  c.nu = nu;
  c.kappa.assign(static_cast<std::size_t>(c.n + 1) * (c.n + 1), kappa0);
  return c;
}

CoefficientGrid field_coefficients(const field::FieldParams& p, TriadicCube cube, int r, int m_field) {
  CoefficientGrid c = constant_coefficients(cube, r, p.nu);
  c.field_level = m_field;
  const int nv = c.n + 1;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < nv; ++b)
    for (int a = 0; a < nv; ++a)
      c.kappa[static_cast<std::size_t>(b) * nv + a] = field::eval_stream(p, c.vertex(a, b), m_field).kappa;
  return c;
}

CoefficientGrid laminate_coefficients(TriadicCube cube, int r, double nu_a, double nu_b, int stripe_width) {
  CoefficientGrid c = constant_coefficients(cube, r, 0.5 * (nu_a + nu_b));
  const int nv = c.n + 1;
  c.nu_vertex.resize(static_cast<std::size_t>(nv) * nv);
  for (int b = 0; b < nv; ++b)
    for (int a = 0; a < nv; ++a) c.nu_vertex[static_cast<std::size_t>(b) * nv + a] = ((a / stripe_width) % 2 == 0) ? nu_a : nu_b;
  return c;
}

CoefficientGrid restrict_coefficients(const CoefficientGrid& c, int i0, int j0, int rs) {
  const int w = static_cast<int>(ipow3(rs));
  if (i0 < 0 || j0 < 0 || i0 + w > c.n || j0 + w > c.n) throw InputError("sub-block outside coefficient grid");
  CoefficientGrid s;
  s.r = rs;
  s.n = w;
  s.nu = c.nu;
  s.field_level = c.field_level;
  const double hh = c.h();
  const Vec2 lo = c.vertex(i0, j0);
  s.cube = {c.cube.level - (c.r - rs), {lo[0] + 0.5 * w * hh, lo[1] + 0.5 * w * hh}};
  const int nv = w + 1;
  s.kappa.resize(static_cast<std::size_t>(nv) * nv);
  if (!c.nu_vertex.empty()) s.nu_vertex.resize(s.kappa.size());
  for (int b = 0; b < nv; ++b)
    for (int a = 0; a < nv; ++a) {
      s.kappa[static_cast<std::size_t>(b) * nv + a] = c.kappa_at(i0 + a, j0 + b);
      if (!c.nu_vertex.empty()) s.nu_vertex[static_cast<std::size_t>(b) * nv + a] = c.nu_at(i0 + a, j0 + b);
    }
  return s;
}

CoefficientGrid scaled(const CoefficientGrid& c, double lambda) {
  CoefficientGrid s = c;
  s.nu *= lambda;
  for (double& k : s.kappa) k *= lambda;
  for (double& v : s.nu_vertex) v *= lambda;
  return s;
}

CoefficientGrid negated_kappa(const CoefficientGrid& c) {
  CoefficientGrid s = c;
  for (double& k : s.kappa) k = -k;
  return s;
}

void check_grid_adequacy(const field::FieldParams& p, TriadicCube cube, int r) {
  const double h = cube.side() / static_cast<double>(ipow3(r));
  if (p.c_star > 0.0 && pow3(static_cast<double>(p.scale_min)) < 9.0 * h * (1.0 - 1e-12))
    throw ConfigError("grid too coarse for the smallest field scale (need 3^scale_min >= 9 h)");
}

// ---------------------------------------------------------------- reference element

namespace {

// clip type per axis: 0 full, 1 upper half (boundary at the lower end), 2 lower half
struct RefElement {
  std::array<std::array<double, 4>, 4> G{};   // int grad Ni . grad Nj
  std::array<std::array<double, 4>, 4> H{};   // int grad Ni . J grad Nj
  std::array<std::array<double, 4>, 4> Bx{};  // int dNi/dx Nk  (unit h)
  std::array<std::array<double, 4>, 4> By{};
  std::array<double, 4> Fx{}, Fy{};           // int dNi/dx (unit h)
  double area = 0.0;                          // unit h
  std::array<Vec2, 4> gp{};                   // Gauss points, unit h, relative to vertex
  double gw = 0.0;                            // Gauss weight, unit h
};

void shape(double x, double y, double N[4], double dx[4], double dy[4]) {
  const double l0x = 0.5 - x, l1x = 0.5 + x, l0y = 0.5 - y, l1y = 0.5 + y;
  N[0] = l0x * l0y;
  N[1] = l1x * l0y;
  N[2] = l0x * l1y;
  N[3] = l1x * l1y;
  dx[0] = -l0y;
  dx[1] = l0y;
  dx[2] = -l1y;
  dx[3] = l1y;
  dy[0] = -l0x;
  dy[1] = -l1x;
  dy[2] = l0x;
  dy[3] = l1x;
}

void interval(int t, double& lo, double& hi) {
  lo = (t == 1) ? 0.0 : -0.5;
  hi = (t == 2) ? 0.0 : 0.5;
}

RefElement make_ref(int tx, int ty) {
  RefElement e;
  double x0, x1, y0, y1;
  interval(tx, x0, x1);
  interval(ty, y0, y1);
  const double g = 1.0 / std::sqrt(12.0);
  const double xs[2] = {0.5 * (x0 + x1) - g * (x1 - x0), 0.5 * (x0 + x1) + g * (x1 - x0)};
  const double ys[2] = {0.5 * (y0 + y1) - g * (y1 - y0), 0.5 * (y0 + y1) + g * (y1 - y0)};
  e.area = (x1 - x0) * (y1 - y0);
  e.gw = 0.25 * e.area;
  int q = 0;
  for (double y : ys)
    for (double x : xs) {
      e.gp[q++] = {x, y};
      double N[4], dx[4], dy[4];
      shape(x, y, N, dx, dy);
      for (int i = 0; i < 4; ++i) {
        e.Fx[i] += e.gw * dx[i];
        e.Fy[i] += e.gw * dy[i];
        for (int j = 0; j < 4; ++j) {
          e.G[i][j] += e.gw * (dx[i] * dx[j] + dy[i] * dy[j]);
          e.H[i][j] += e.gw * (dx[i] * dy[j] - dy[i] * dx[j]);
          e.Bx[i][j] += e.gw * dx[i] * N[j];
          e.By[i][j] += e.gw * dy[i] * N[j];
        }
      }
    }
  return e;
}

const RefElement& ref(int tx, int ty) {
  static const std::array<RefElement, 9> table = [] {
    std::array<RefElement, 9> t;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) t[a + 3 * b] = make_ref(a, b);
    return t;
  }();
  return table[tx + 3 * ty];
}

int clip(int a, int n) { return a == 0 ? 1 : (a == n ? 2 : 0); }

struct Node {
  int i, j;    // folded interior cell
  double s;    // fold sign
  int gi, gj;  // unfolded (possibly ghost) index
};

Node fold(int ci, int cj, int n) {
  Node nd{ci, cj, 1.0, ci, cj};
  if (ci < 0) { nd.i = 0; nd.s = -nd.s; }
  if (ci >= n) { nd.i = n - 1; nd.s = -nd.s; }
  if (cj < 0) { nd.j = 0; nd.s = -nd.s; }
  if (cj >= n) { nd.j = n - 1; nd.s = -nd.s; }
  return nd;
}

void element_nodes(int a, int b, int n, Node nd[4]) {
  nd[0] = fold(a - 1, b - 1, n);
  nd[1] = fold(a, b - 1, n);
  nd[2] = fold(a - 1, b, n);
  nd[3] = fold(a, b, n);
}

using Local = std::array<std::array<double, 4>, 4>;

template <class LocalFn>
Stencil9 assemble(const CoefficientGrid& c, LocalFn&& local) {
  const int n = c.n;
  Stencil9 S;
  S.n = n;
  S.c.assign(static_cast<std::size_t>(n) * n, std::array<double, 9>{});
  for (int b = 0; b <= n; ++b)
    for (int a = 0; a <= n; ++a) {
      const RefElement& e = ref(clip(a, n), clip(b, n));
      const Local M = local(a, b, e);
      Node nd[4];
      element_nodes(a, b, n, nd);
      for (int k = 0; k < 4; ++k)
        for (int l = 0; l < 4; ++l) {
          const int di = nd[l].i - nd[k].i, dj = nd[l].j - nd[k].j;
          S.c[static_cast<std::size_t>(nd[k].j) * n + nd[k].i][(di + 1) + 3 * (dj + 1)] += nd[k].s * nd[l].s * M[k][l];
        }
    }
  return S;
}

Local weighted(const Local& A, double w) {
  Local M;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) M[i][j] = w * A[i][j];
  return M;
}

// Element operator applied to an extended array (ghost ring included), test rows folded.
template <class LocalFn>
std::vector<double> apply_extended(const CoefficientGrid& c, LocalFn&& local, const std::vector<double>& ext) {
  const int n = c.n, ne = n + 2;
  std::vector<double> y(static_cast<std::size_t>(n) * n, 0.0);
  for (int b = 0; b <= n; ++b)
    for (int a = 0; a <= n; ++a) {
      const RefElement& e = ref(clip(a, n), clip(b, n));
      const Local M = local(a, b, e);
      Node nd[4];
      element_nodes(a, b, n, nd);
      double v[4];
      for (int l = 0; l < 4; ++l) v[l] = ext[static_cast<std::size_t>(nd[l].gj + 1) * ne + nd[l].gi + 1];
      for (int k = 0; k < 4; ++k) {
        double acc = 0.0;
        for (int l = 0; l < 4; ++l) acc += M[k][l] * v[l];
        y[static_cast<std::size_t>(nd[k].j) * n + nd[k].i] += nd[k].s * acc;
      }
    }
  return y;
}

// ghost values carrying the boundary data (interior zero)
std::vector<double> boundary_lift(const CoefficientGrid& c, const BoundaryTrace& h) {
  const int n = c.n, ne = n + 2;
  std::vector<double> ext(static_cast<std::size_t>(ne) * ne, 0.0);
  if (!h) return ext;
  const double hh = c.h();
  const double L = c.cube.side();
  const Vec2 lo{c.cube.center[0] - 0.5 * L, c.cube.center[1] - 0.5 * L};
  auto at = [&](int gi, int gj) -> double& { return ext[static_cast<std::size_t>(gj + 1) * ne + gi + 1]; };
  auto xc = [&](int i) { return lo[0] + (i + 0.5) * hh; };
  auto yc = [&](int j) { return lo[1] + (j + 0.5) * hh; };
  const double xl = lo[0], xr = lo[0] + L, yb = lo[1], yt = lo[1] + L;
  for (int k = 0; k < n; ++k) {
    at(-1, k) = 2.0 * h({xl, yc(k)});
    at(n, k) = 2.0 * h({xr, yc(k)});
    at(k, -1) = 2.0 * h({xc(k), yb});
    at(k, n) = 2.0 * h({xc(k), yt});
  }
  at(-1, -1) = 4.0 * h({xl, yb}) - 2.0 * h({xl, yc(0)}) - 2.0 * h({xc(0), yb});
  at(n, -1) = 4.0 * h({xr, yb}) - 2.0 * h({xr, yc(0)}) - 2.0 * h({xc(n - 1), yb});
  at(-1, n) = 4.0 * h({xl, yt}) - 2.0 * h({xl, yc(n - 1)}) - 2.0 * h({xc(0), yt});
  at(n, n) = 4.0 * h({xr, yt}) - 2.0 * h({xr, yc(n - 1)}) - 2.0 * h({xc(n - 1), yt});
  return ext;
}

// linear extrapolation into the ghost ring
std::vector<double> extend_linear(const GridFunction& g) {
  const int n = g.n(), ne = n + 2;
  std::vector<double> ext(static_cast<std::size_t>(ne) * ne, 0.0);
  auto at = [&](int gi, int gj) -> double& { return ext[static_cast<std::size_t>(gj + 1) * ne + gi + 1]; };
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) at(i, j) = g(i, j);
  const int o = n >= 2 ? 1 : 0;
  for (int k = 0; k < n; ++k) {
    at(-1, k) = 2.0 * g(0, k) - g(o, k);
    at(n, k) = 2.0 * g(n - 1, k) - g(n - 1 - o, k);
    at(k, -1) = 2.0 * g(k, 0) - g(k, o);
    at(k, n) = 2.0 * g(k, n - 1) - g(k, n - 1 - o);
  }
  at(-1, -1) = 2.0 * g(0, 0) - g(o, o);
  at(n, -1) = 2.0 * g(n - 1, 0) - g(n - 1 - o, o);
  at(-1, n) = 2.0 * g(0, n - 1) - g(o, n - 1 - o);
  at(n, n) = 2.0 * g(n - 1, n - 1) - g(n - 1 - o, n - 1 - o);
  return ext;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace

// ---------------------------------------------------------------- stencil

void Stencil9::apply(const double* x, double* y, bool parallel) const {
  if (!parallel) {
    apply_serial(x, y);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const auto& s = c[static_cast<std::size_t>(j) * n + i];
      double acc = 0.0;
      for (int dj = -1; dj <= 1; ++dj) {
        const int jj = j + dj;
        if (jj < 0 || jj >= n) continue;
        for (int di = -1; di <= 1; ++di) {
          const int ii = i + di;
          if (ii < 0 || ii >= n) continue;
          acc += s[(di + 1) + 3 * (dj + 1)] * x[static_cast<std::size_t>(jj) * n + ii];
        }
      }
      y[static_cast<std::size_t>(j) * n + i] = acc;
    }
}

void Stencil9::apply_serial(const double* x, double* y) const {
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const auto& s = c[static_cast<std::size_t>(j) * n + i];
      double acc = 0.0;
      for (int dj = -1; dj <= 1; ++dj) {
        const int jj = j + dj;
        if (jj < 0 || jj >= n) continue;
        for (int di = -1; di <= 1; ++di) {
          const int ii = i + di;
          if (ii < 0 || ii >= n) continue;
          acc += s[(di + 1) + 3 * (dj + 1)] * x[static_cast<std::size_t>(jj) * n + ii];
        }
      }
      y[static_cast<std::size_t>(j) * n + i] = acc;
    }
}

Stencil9 nu_operator(const CoefficientGrid& c) {
  return assemble(c, [&](int a, int b, const RefElement& e) { return weighted(e.G, c.nu_at(a, b)); });
}

Stencil9 kappa_operator(const CoefficientGrid& c) {
  return assemble(c, [&](int a, int b, const RefElement& e) { return weighted(e.H, c.kappa_at(a, b)); });
}

namespace {
auto dirichlet_local(const CoefficientGrid& c) {
  return [&c](int a, int b, const RefElement& e) {
    Local M;
    const double nu = c.nu_at(a, b), k = c.kappa_at(a, b);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) M[i][j] = nu * e.G[i][j] + k * e.H[i][j];
    return M;
  };
}
}  // namespace

Stencil9 dirichlet_operator(const CoefficientGrid& c) { return assemble(c, dirichlet_local(c)); }

std::vector<double> dirichlet_rhs(const CoefficientGrid& c, const GridFunction* g1, const GridFunction* g2,
                                  const BoundaryTrace& h) {
  const int n = c.n, ne = n + 2;
  std::vector<double> rhs(static_cast<std::size_t>(n) * n, 0.0);
  const double hh = c.h();
  for (const auto& [g, comp] : {std::pair{g1, 0}, std::pair{g2, 1}}) {
    if (!g) continue;
    if (g->n() != n) throw InputError("forcing grid does not match coefficient grid");
    g->check_finite();
    const std::vector<double> ext = extend_linear(*g);
    for (int b = 0; b <= n; ++b)
      for (int a = 0; a <= n; ++a) {
        const RefElement& e = ref(clip(a, n), clip(b, n));
        const auto& B = comp == 0 ? e.Bx : e.By;
        Node nd[4];
        element_nodes(a, b, n, nd);
        double v[4];
        for (int l = 0; l < 4; ++l) v[l] = ext[static_cast<std::size_t>(nd[l].gj + 1) * ne + nd[l].gi + 1];
        for (int k = 0; k < 4; ++k) {
          double acc = 0.0;
          for (int l = 0; l < 4; ++l) acc += B[k][l] * v[l];
          rhs[static_cast<std::size_t>(nd[k].j) * n + nd[k].i] -= nd[k].s * hh * acc;
        }
      }
  }
  if (h) {
    const std::vector<double> lift = boundary_lift(c, h);
    const std::vector<double> Ab = apply_extended(c, dirichlet_local(c), lift);
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] -= Ab[i];
  }
  return rhs;
}

double nu_energy(const CoefficientGrid& c, const std::vector<double>& u) {
  const Stencil9 S = nu_operator(c);
  std::vector<double> y(u.size());
  S.apply_serial(u.data(), y.data());
  return dot(u, y);
}

// ---------------------------------------------------------------- fast Poisson

namespace {
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

FastPoisson::FastPoisson(int n) : n_(n), eig_(static_cast<std::size_t>(n) * n) {
  std::vector<double> lam(n), mu(n);
  for (int k = 0; k < n; ++k) {
    const double th = M_PI * (k + 1) / n;
    lam[k] = 2.0 - 2.0 * std::cos(th);
    mu[k] = (2.0 + std::cos(th)) / 3.0;
  }
  for (int l = 0; l < n; ++l)
    for (int k = 0; k < n; ++k) eig_[static_cast<std::size_t>(l) * n + k] = lam[k] * mu[l] + mu[k] * lam[l];
  std::vector<double> a(eig_.size()), b(eig_.size());
  std::lock_guard<std::mutex> lock(fftw_mutex());
  fwd_ = fftw_plan_r2r_2d(n, n, a.data(), b.data(), FFTW_RODFT10, FFTW_RODFT10, FFTW_ESTIMATE | FFTW_UNALIGNED);
  inv_ = fftw_plan_r2r_2d(n, n, a.data(), b.data(), FFTW_RODFT01, FFTW_RODFT01, FFTW_ESTIMATE | FFTW_UNALIGNED);
}

FastPoisson::~FastPoisson() {
  std::lock_guard<std::mutex> lock(fftw_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(inv_));
}

void FastPoisson::solve(const double* r, double* x) const {
  const std::size_t nn = static_cast<std::size_t>(n_) * n_;
  std::vector<double> in(r, r + nn), tmp(nn);
  fftw_execute_r2r(static_cast<fftw_plan>(fwd_), in.data(), tmp.data());
  const double scale = 1.0 / (4.0 * n_ * n_);
  for (std::size_t i = 0; i < nn; ++i) tmp[i] *= scale / eig_[i];
  fftw_execute_r2r(static_cast<fftw_plan>(inv_), tmp.data(), x);
}

// ---------------------------------------------------------------- Krylov solvers

namespace {

using Op = std::function<void(const std::vector<double>&, std::vector<double>&)>;

SolveReport gmres(const Op& A, const Op& M, const std::vector<double>& b, std::vector<double>& x, double tol,
                  int restart, int max_iter) {
  SolveReport rep;
  const std::size_t N = b.size();
  const double bnorm = norm(b);
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    rep.converged = true;
    return rep;
  }
  std::vector<double> r(N), w(N), z(N);
  std::vector<std::vector<double>> V(restart + 1, std::vector<double>(N));
  std::vector<std::vector<double>> H(restart + 1, std::vector<double>(restart, 0.0));
  std::vector<double> cs(restart), sn(restart), gv(restart + 1), y(restart);
  auto residual = [&] {
    A(x, w);
    for (std::size_t i = 0; i < N; ++i) r[i] = b[i] - w[i];
    return norm(r);
  };
  double rnorm = residual();
  while (true) {
    rep.relative_residual = rnorm / bnorm;
    if (rep.relative_residual <= tol) {
      rep.converged = true;
      return rep;
    }
    if (rep.iterations >= max_iter) return rep;
    for (std::size_t i = 0; i < N; ++i) V[0][i] = r[i] / rnorm;
    std::fill(gv.begin(), gv.end(), 0.0);
    gv[0] = rnorm;
    int k = 0;
    for (; k < restart && rep.iterations < max_iter; ++k) {
      ++rep.iterations;
      M(V[k], z);
      A(z, w);
      for (int i = 0; i <= k; ++i) {
        H[i][k] = dot(w, V[i]);
        for (std::size_t t = 0; t < N; ++t) w[t] -= H[i][k] * V[i][t];
      }
      H[k + 1][k] = norm(w);
      if (H[k + 1][k] > 0.0)
        for (std::size_t t = 0; t < N; ++t) V[k + 1][t] = w[t] / H[k + 1][k];
      for (int i = 0; i < k; ++i) {
        const double t = cs[i] * H[i][k] + sn[i] * H[i + 1][k];
        H[i + 1][k] = -sn[i] * H[i][k] + cs[i] * H[i + 1][k];
        H[i][k] = t;
      }
      const double den = std::hypot(H[k][k], H[k + 1][k]);
      cs[k] = H[k][k] / den;
      sn[k] = H[k + 1][k] / den;
      H[k][k] = den;
      H[k + 1][k] = 0.0;
      gv[k + 1] = -sn[k] * gv[k];
      gv[k] = cs[k] * gv[k];
      if (std::abs(gv[k + 1]) / bnorm <= 0.5 * tol) {
        ++k;
        break;
      }
    }
    for (int i = k - 1; i >= 0; --i) {
      double s = gv[i];
      for (int j = i + 1; j < k; ++j) s -= H[i][j] * y[j];
      y[i] = s / H[i][i];
    }
    std::fill(w.begin(), w.end(), 0.0);
    for (int j = 0; j < k; ++j)
      for (std::size_t t = 0; t < N; ++t) w[t] += y[j] * V[j][t];
    M(w, z);
    for (std::size_t t = 0; t < N; ++t) x[t] += z[t];
    rnorm = residual();
  }
}

SolveReport pcg(const Op& A, const Op& M, const std::vector<double>& b, std::vector<double>& x, double tol,
                int max_iter) {
  SolveReport rep;
  const std::size_t N = b.size();
  const double bnorm = norm(b);
  std::fill(x.begin(), x.end(), 0.0);
  if (bnorm == 0.0) {
    rep.converged = true;
    return rep;
  }
  std::vector<double> r = b, z(N), p(N), q(N);
  M(r, z);
  p = z;
  double rz = dot(r, z);
  while (rep.iterations < max_iter) {
    ++rep.iterations;
    A(p, q);
    const double alpha = rz / dot(p, q);
    for (std::size_t i = 0; i < N; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    rep.relative_residual = norm(r) / bnorm;
    if (rep.relative_residual <= tol) break;
    M(r, z);
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < N; ++i) p[i] = z[i] + beta * p[i];
  }
  A(x, q);
  for (std::size_t i = 0; i < N; ++i) q[i] = b[i] - q[i];
  rep.relative_residual = norm(q) / bnorm;
  rep.converged = rep.relative_residual <= tol;
  return rep;
}

void check_tol(double tol) {
  if (!(tol > 1e-14 && tol < 1e-4)) throw InputError("tolerance must lie in (1e-14, 1e-4)");
}

double mean_nu(const CoefficientGrid& c) {
  if (c.nu_vertex.empty()) return c.nu;
  double s = 0.0;
  for (double v : c.nu_vertex) s += v;
  return s / static_cast<double>(c.nu_vertex.size());
}

}  // namespace

namespace {

DirichletResult solve_dirichlet_direct(const CoefficientGrid& c, const Stencil9& S, const std::vector<double>& rhs) {
  const int n = c.n;
  const auto N = static_cast<Eigen::Index>(n) * n;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(N) * 9);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const auto& s = S.c[static_cast<std::size_t>(j) * n + i];
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= n || jj >= n) continue;
          const double v = s[(di + 1) + 3 * (dj + 1)];
          if (v != 0.0) trip.emplace_back(j * n + i, jj * n + ii, v);
        }
    }
  Eigen::SparseMatrix<double> K(N, N);
  K.setFromTriplets(trip.begin(), trip.end());
  K.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(K);
  if (lu.info() != Eigen::Success) throw SolveError("dirichlet factorization failed: " + lu.lastErrorMessage());
  const Eigen::Map<const Eigen::VectorXd> b(rhs.data(), N);
  const Eigen::VectorXd x = lu.solve(b);
  if (lu.info() != Eigen::Success || !x.allFinite()) throw SolveError("dirichlet direct solve failed");
  DirichletResult res;
  const double bn = b.norm();
  res.report.iterations = 1;
  res.report.relative_residual = bn > 0.0 ? (K * x - b).norm() / bn : 0.0;
  res.report.converged = true;
  res.u = GridFunction(c.cube, c.r);
  res.u.values().assign(x.data(), x.data() + N);
  return res;
}

}  // namespace

DirichletResult solve_dirichlet(const CoefficientGrid& c, const GridFunction* g1, const GridFunction* g2,
                                const BoundaryTrace& h, const SolveOptions& opt) {
  c.validate();
  check_tol(opt.tol);
  const int n = c.n;
  const std::size_t N = static_cast<std::size_t>(n) * n;
  const Stencil9 S = dirichlet_operator(c);
  const std::vector<double> rhs = dirichlet_rhs(c, g1, g2, h);
  for (double v : rhs)
    if (!std::isfinite(v)) throw InputError("non-finite forcing or boundary data");
  if (opt.direct) return solve_dirichlet_direct(c, S, rhs);
  const Op A = [&](const std::vector<double>& x, std::vector<double>& y) { S.apply(x.data(), y.data(), opt.parallel); };
  Op M;
  std::unique_ptr<FastPoisson> fp;
  std::vector<double> dinv;
  if (opt.preconditioner == Preconditioner::FastPoisson) {
    fp = std::make_unique<FastPoisson>(n);
    const double nu = mean_nu(c);
    M = [&fp, nu](const std::vector<double>& x, std::vector<double>& y) {
      fp->solve(x.data(), y.data());
      for (double& v : y) v /= nu;
    };
  } else {
    dinv.resize(N);
    for (std::size_t i = 0; i < N; ++i) dinv[i] = 1.0 / S.c[i][4];
    M = [&dinv](const std::vector<double>& x, std::vector<double>& y) {
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = dinv[i] * x[i];
    };
  }
  std::vector<double> x(N, 0.0);
  const int max_iter = opt.max_iter > 0 ? opt.max_iter : 20 * n * n;
  DirichletResult res;
  res.report = gmres(A, M, rhs, x, opt.tol, opt.restart, max_iter);
  if (!res.report.converged)
    throw SolveError("dirichlet solve diverged: relative residual " + std::to_string(res.report.relative_residual) +
                     " after " + std::to_string(res.report.iterations) + " iterations");
  res.u = GridFunction(c.cube, c.r);
  res.u.values() = x;
  return res;
}

// ---------------------------------------------------------------- block minimization

namespace {

struct BlockSystem {
  Stencil9 Suu, Sup, Spp;  // Suu = S_nu + S_{k^2/nu}, Sup = -S_{k/nu}, Spp = S_{1/nu}
  double m00 = 0.0, m01 = 0.0, m11 = 0.0;  // mean block coefficients
};

BlockSystem block_system(const CoefficientGrid& c) {
  BlockSystem B;
  B.Suu = assemble(c, [&](int a, int b, const RefElement& e) {
    const double nu = c.nu_at(a, b), k = c.kappa_at(a, b);
    return weighted(e.G, nu + k * k / nu);
  });
  B.Sup = assemble(c, [&](int a, int b, const RefElement& e) { return weighted(e.G, -c.kappa_at(a, b) / c.nu_at(a, b)); });
  B.Spp = assemble(c, [&](int a, int b, const RefElement& e) { return weighted(e.G, 1.0 / c.nu_at(a, b)); });
  const int n = c.n;
  double wsum = 0.0;
  for (int b = 0; b <= n; ++b)
    for (int a = 0; a <= n; ++a) {
      const RefElement& e = ref(clip(a, n), clip(b, n));
      const double nu = c.nu_at(a, b), k = c.kappa_at(a, b);
      B.m00 += e.area * (nu + k * k / nu);
      B.m01 += e.area * (-k / nu);
      B.m11 += e.area / nu;
      wsum += e.area;
    }
  B.m00 /= wsum;
  B.m01 /= wsum;
  B.m11 /= wsum;
  return B;
}

// [u part, psi part]
std::vector<double> block_rhs(const CoefficientGrid& c, const Vec4& P) {
  const int n = c.n;
  const std::size_t N = static_cast<std::size_t>(n) * n;
  std::vector<double> rhs(2 * N, 0.0);
  const double hh = c.h();
  const double p1 = P[0], p2 = P[1], q1 = P[2], q2 = P[3];
  for (int b = 0; b <= n; ++b)
    for (int a = 0; a <= n; ++a) {
      const RefElement& e = ref(clip(a, n), clip(b, n));
      const double nu = c.nu_at(a, b), k = c.kappa_at(a, b);
      const double c1 = -q2 - k * p1, c2 = q1 - k * p2;  // J^T q - k p
      const double ru1 = -nu * p1 + (k / nu) * c1, ru2 = -nu * p2 + (k / nu) * c2;
      const double rp1 = -c1 / nu, rp2 = -c2 / nu;
      Node nd[4];
      element_nodes(a, b, n, nd);
      for (int i = 0; i < 4; ++i) {
        const std::size_t idx = static_cast<std::size_t>(nd[i].j) * n + nd[i].i;
        rhs[idx] += nd[i].s * hh * (ru1 * e.Fx[i] + ru2 * e.Fy[i]);
        rhs[N + idx] += nd[i].s * hh * (rp1 * e.Fx[i] + rp2 * e.Fy[i]);
      }
    }
  return rhs;
}

void check_block_input(const CoefficientGrid& c) {
  for (int b = 0; b <= c.n; ++b)
    for (int a = 0; a <= c.n; ++a)
      if (!(c.nu_at(a, b) > 0.0) || !std::isfinite(c.kappa_at(a, b)))
        throw InputError("pointwise block matrix lost positive definiteness");
}

}  // namespace

double block_energy(const CoefficientGrid& c, const Vec4& P, const GridFunction& u, const GridFunction& psi) {
  const int n = c.n;
  const double hh = c.h();
  const double p1 = P[0], p2 = P[1], q1 = P[2], q2 = P[3];
  double total = 0.0, area = 0.0;
  for (int b = 0; b <= n; ++b)
    for (int a = 0; a <= n; ++a) {
      const RefElement& e = ref(clip(a, n), clip(b, n));
      const double nu = c.nu_at(a, b), k = c.kappa_at(a, b);
      Node nd[4];
      element_nodes(a, b, n, nd);
      double uv[4], pv[4];
      for (int l = 0; l < 4; ++l) {
        uv[l] = nd[l].s * u(nd[l].i, nd[l].j);
        pv[l] = nd[l].s * psi(nd[l].i, nd[l].j);
      }
      for (const Vec2& g : e.gp) {
        double N[4], dx[4], dy[4];
        shape(g[0], g[1], N, dx, dy);
        double ux = 0.0, uy = 0.0, px = 0.0, py = 0.0;
        for (int l = 0; l < 4; ++l) {
          ux += uv[l] * dx[l];
          uy += uv[l] * dy[l];
          px += pv[l] * dx[l];
          py += pv[l] * dy[l];
        }
        ux /= hh;
        uy /= hh;
        px /= hh;
        py /= hh;
        const double x1 = p1 + ux, x2 = p2 + uy;
        const double d1 = -q2 - k * p1 + px - k * ux;
        const double d2 = q1 - k * p2 + py - k * uy;
        total += e.gw * (0.5 * nu * (x1 * x1 + x2 * x2) + 0.5 / nu * (d1 * d1 + d2 * d2));
      }
      area += e.area;
    }
  return total / area;
}

BlockResult solve_block_minimization(const CoefficientGrid& c, const Vec4& P, const SolveOptions& opt) {
  c.validate();
  check_tol(opt.tol);
  for (double v : P)
    if (!std::isfinite(v)) throw InputError("non-finite block vector");
  check_block_input(c);
  BlockResult res;
  const int n = c.n;
  const std::size_t N = static_cast<std::size_t>(n) * n;
  const BlockSystem B = block_system(c);
  const std::vector<double> rhs = block_rhs(c, P);
  const Op A = [&](const std::vector<double>& x, std::vector<double>& y) {
    std::vector<double> t(N);
    const double* xu = x.data();
    const double* xp = x.data() + N;
    B.Suu.apply(xu, y.data(), opt.parallel);
    B.Sup.apply(xp, t.data(), opt.parallel);
    for (std::size_t i = 0; i < N; ++i) y[i] += t[i];
    B.Spp.apply(xp, y.data() + N, opt.parallel);
    B.Sup.apply(xu, t.data(), opt.parallel);
    for (std::size_t i = 0; i < N; ++i) y[N + i] += t[i];
  };
  FastPoisson fp(n);
  const double det = B.m00 * B.m11 - B.m01 * B.m01;
  const double i00 = B.m11 / det, i01 = -B.m01 / det, i11 = B.m00 / det;
  const Op M = [&](const std::vector<double>& x, std::vector<double>& y) {
    std::vector<double> a(N), b(N);
    fp.solve(x.data(), a.data());
    fp.solve(x.data() + N, b.data());
    for (std::size_t i = 0; i < N; ++i) {
      y[i] = i00 * a[i] + i01 * b[i];
      y[N + i] = i01 * a[i] + i11 * b[i];
    }
  };
  std::vector<double> x(2 * N, 0.0);
  const int max_iter = opt.max_iter > 0 ? opt.max_iter : 20 * n * n;
  res.report = pcg(A, M, rhs, x, opt.tol, max_iter);
  if (!res.report.converged)
    throw SolveError("block minimization diverged: relative residual " + std::to_string(res.report.relative_residual));
  res.u = GridFunction(c.cube, c.r);
  res.psi = GridFunction(c.cube, c.r);
  std::copy(x.begin(), x.begin() + static_cast<long>(N), res.u.values().begin());
  std::copy(x.begin() + static_cast<long>(N), x.end(), res.psi.values().begin());
  res.energy = block_energy(c, P, res.u, res.psi);
  return res;
}

struct BlockFactor::Impl {
  CoefficientGrid c;
  Eigen::SparseMatrix<double> K;
  Eigen::CholmodSupernodalLLT<Eigen::SparseMatrix<double>> llt;
};

BlockFactor::BlockFactor(const CoefficientGrid& c) : impl_(std::make_unique<Impl>()) {
  c.validate();
  check_block_input(c);
  impl_->c = c;
  const int n = c.n;
  const BlockSystem B = block_system(c);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n) * n * 36);
  auto add = [&](const Stencil9& S, int ro, int co) {
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        for (int dj = -1; dj <= 1; ++dj)
          for (int di = -1; di <= 1; ++di) {
            const int ii = i + di, jj = j + dj;
            if (ii < 0 || jj < 0 || ii >= n || jj >= n) continue;
            const double v = S.c[static_cast<std::size_t>(j) * n + i][(di + 1) + 3 * (dj + 1)];
            if (v != 0.0) trip.emplace_back(2 * (j * n + i) + ro, 2 * (jj * n + ii) + co, v);
          }
  };
  add(B.Suu, 0, 0);
  add(B.Sup, 0, 1);
  add(B.Sup, 1, 0);
  add(B.Spp, 1, 1);
  impl_->K.resize(2 * n * n, 2 * n * n);
  impl_->K.setFromTriplets(trip.begin(), trip.end());
  impl_->llt.compute(impl_->K);
  if (impl_->llt.info() != Eigen::Success) throw SolveError("block system factorization failed");
}

BlockFactor::~BlockFactor() = default;
BlockFactor::BlockFactor(BlockFactor&&) noexcept = default;
BlockFactor& BlockFactor::operator=(BlockFactor&&) noexcept = default;

BlockResult BlockFactor::solve(const Vec4& P) const {
  for (double v : P)
    if (!std::isfinite(v)) throw InputError("non-finite block vector");
  const CoefficientGrid& c = impl_->c;
  const int n = c.n;
  const std::size_t N = static_cast<std::size_t>(n) * n;
  const std::vector<double> rhs = block_rhs(c, P);
  Eigen::VectorXd b(2 * N);
  for (std::size_t i = 0; i < N; ++i) {
    b[2 * i] = rhs[i];
    b[2 * i + 1] = rhs[N + i];
  }
  const Eigen::VectorXd x = impl_->llt.solve(b);
  BlockResult res;
  const double bn = b.norm();
  res.report.iterations = 1;
  res.report.relative_residual = bn > 0.0 ? (impl_->K * x - b).norm() / bn : 0.0;
  res.report.converged = true;
  res.u = GridFunction(c.cube, c.r);
  res.psi = GridFunction(c.cube, c.r);
  for (std::size_t i = 0; i < N; ++i) {
    res.u.values()[i] = x[2 * i];
    res.psi.values()[i] = x[2 * i + 1];
  }
  res.energy = block_energy(c, P, res.u, res.psi);
  return res;
}

void write_triplets(const Stencil9& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << std::setprecision(17);
  const int n = s.n;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const int ii = i + di, jj = j + dj;
          const double v = s.c[static_cast<std::size_t>(j) * n + i][(di + 1) + 3 * (dj + 1)];
          if (ii < 0 || jj < 0 || ii >= n || jj >= n || v == 0.0) continue;
          out << j * n + i << ' ' << jj * n + ii << ' ' << v << '\n';
        }
}

}  // namespace superlab::solver

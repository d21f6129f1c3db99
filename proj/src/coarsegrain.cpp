#include "superlab/coarsegrain.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>

namespace superlab::coarsegrain {

using solver::CoefficientGrid;

namespace {

Mat4d swap_matrix() {
  Mat4d R = Mat4d::Zero();
  R.block<2, 2>(0, 2) = Mat2d::Identity();
  R.block<2, 2>(2, 0) = Mat2d::Identity();
  return R;
}

solver::Vec4 to_array(const Vec4d& v) { return {v[0], v[1], v[2], v[3]}; }

double spectral_norm(const Mat2d& m) { return Eigen::JacobiSVD<Mat2d>(m).singularValues()[0]; }

double min_eig2(const Mat2d& m) {
  const Mat2d sym = 0.5 * (m + m.transpose());
  return Eigen::SelfAdjointEigenSolver<Mat2d>(sym, Eigen::EigenvaluesOnly).eigenvalues()[0];
}

double css(double sq) { return 1.0 - pow3(-sq); }

// run body(i) for i in [0, count), concurrently if requested, rethrowing the first failure
template <class F>
void parallel_for(int count, bool parallel, F&& body) {
  std::exception_ptr err = nullptr;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int i = 0; i < count; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(superlab_cg_error)
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

// vertex block matrices with dual-element area weights
void pointwise_blocks(const CoefficientGrid& c, std::vector<Mat4d>& blocks, std::vector<double>& weights) {
  const int nv = c.n + 1;
  blocks.clear();
  weights.clear();
  for (int b = 0; b < nv; ++b)
    for (int a = 0; a < nv; ++a) {
      blocks.push_back(pointwise_block(c.nu_at(a, b), c.kappa_at(a, b)));
      const double wa = (a == 0 || a == c.n) ? 0.5 : 1.0, wb = (b == 0 || b == c.n) ? 0.5 : 1.0;
      weights.push_back(wa * wb);
    }
}

}  // namespace

Mat4d pointwise_block(const Mat2d& s, const Mat2d& k) {
  const Mat2d si = s.inverse();
  Mat4d A;
  A.block<2, 2>(0, 0) = s + k.transpose() * si * k;
  A.block<2, 2>(0, 2) = -k.transpose() * si;
  A.block<2, 2>(2, 0) = -si * k;
  A.block<2, 2>(2, 2) = si;
  return A;
}

Mat4d pointwise_block(double nu, double kappa) {
  Mat2d k;
  k << 0.0, kappa, -kappa, 0.0;
  return pointwise_block(nu * Mat2d::Identity(), k);
}

Mat4d swap_blocks(const Mat4d& A) {
  const Mat4d R = swap_matrix();
  return R * A * R;
}

Mat4d compute_block_matrix(const CoefficientGrid& c, const BlockOptions& opt) {
  c.validate();
  solver::SolveOptions so = opt.solve;
  if (opt.parallel) so.parallel = false;
  std::unique_ptr<solver::BlockFactor> factor;
  if (opt.method == BlockMethod::Factorized) factor = std::make_unique<solver::BlockFactor>(c);
  auto solve = [&](const Vec4d& P, const std::string& label) {
    try {
      return factor ? factor->solve(to_array(P)) : solver::solve_block_minimization(c, to_array(P), so);
    } catch (const SolveError& ex) {
      throw SolveError(std::string(ex.what()) + " (" + label + ")");
    }
  };
  const bool par = opt.parallel && !factor;
  std::vector<solver::BlockResult> basis(4);
  parallel_for(4, par, [&](int i) {
    basis[static_cast<std::size_t>(i)] = solve(Vec4d::Unit(i), "basis vector " + std::to_string(i));
  });
  Vec4d mu_diag;
  for (int i = 0; i < 4; ++i) mu_diag[i] = basis[static_cast<std::size_t>(i)].energy;
  Mat4d A = Mat4d::Zero();
  for (int i = 0; i < 4; ++i) A(i, i) = 2.0 * mu_diag[i];
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) pairs.emplace_back(i, j);
  std::vector<double> mu_pair(pairs.size());
  parallel_for(static_cast<int>(pairs.size()), par, [&](int k) {
    const auto [i, j] = pairs[static_cast<std::size_t>(k)];
    const Vec4d e = Vec4d::Unit(i) + Vec4d::Unit(j);
    if (opt.pairs == PairMode::DirectSolves) {
      mu_pair[static_cast<std::size_t>(k)] = solve(e, "basis pair " + std::to_string(i) + "," + std::to_string(j)).energy;
      return;
    }
    const auto& bi = basis[static_cast<std::size_t>(i)];
    const auto& bj = basis[static_cast<std::size_t>(j)];
    grid::GridFunction u = bi.u, psi = bi.psi;
    for (std::size_t t = 0; t < u.values().size(); ++t) {
      u.values()[t] += bj.u.values()[t];
      psi.values()[t] += bj.psi.values()[t];
    }
    mu_pair[static_cast<std::size_t>(k)] = solver::block_energy(c, to_array(e), u, psi);
  });
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    A(i, j) = A(j, i) = mu_pair[k] - mu_diag[i] - mu_diag[j];
  }
  A = 0.5 * (A + A.transpose()).eval();
  if (Eigen::LLT<Mat4d>(A).info() != Eigen::Success) throw SolveError("block matrix is not positive definite");
  return A;
}

CGMatrices extract_cg_matrices(const Mat4d& A, grid::TriadicCube cube, int field_level) {
  const Mat2d A22 = A.block<2, 2>(2, 2);
  const Mat2d sym = 0.5 * (A22 + A22.transpose());
  const double d = sym.determinant();
  if (!(std::abs(d) > 1e-14 * sym.squaredNorm()) || !std::isfinite(d))
    throw InputError("singular lower-right block in coarse-grained extraction");
  CGMatrices m;
  m.A = A;
  m.cube = cube;
  m.field_level = field_level;
  m.s_star = sym.inverse();
  m.k = -m.s_star * A.block<2, 2>(2, 0);
  m.b = A.block<2, 2>(0, 0);
  m.s = m.b - m.k.transpose() * sym * m.k;
  return m;
}

Mat4d assemble_block(const CGMatrices& m) {
  const Mat2d si = m.s_star.inverse();
  Mat4d A;
  A.block<2, 2>(0, 0) = m.s + m.k.transpose() * si * m.k;
  A.block<2, 2>(0, 2) = -m.k.transpose() * si;
  A.block<2, 2>(2, 0) = -si * m.k;
  A.block<2, 2>(2, 2) = si;
  return A;
}

CGMatrices coarse_grain(const CoefficientGrid& c, const BlockOptions& opt) {
  return extract_cg_matrices(compute_block_matrix(c, opt), c.cube, c.field_level);
}

double compute_J(const CGMatrices& m, const Vec2d& p, const Vec2d& q) {
  const Vec2d w = q + m.k * p;
  return 0.5 * p.dot(m.s * p) + 0.5 * w.dot(m.s_star.inverse() * w) - p.dot(q);
}

double compute_J_block(const Mat4d& A, const Vec2d& p, const Vec2d& q) {
  Vec4d P;
  P << p, -q;
  return 0.5 * P.dot(A * P) - p.dot(q);
}

double compute_J_adjoint(const Mat4d& A, const Vec2d& p, const Vec2d& q) {
  Vec4d P;
  P << p, q;
  return 0.5 * P.dot(A * P) - p.dot(q);
}

double compute_J_split(const CGMatrices& m, const Vec2d& p, const Vec2d& q) {
  const Vec2d w = q - (m.s_star - m.k) * p;
  return 0.5 * p.dot((m.s - m.s_star) * p) + 0.5 * p.dot((m.k + m.k.transpose()) * p) +
         0.5 * w.dot(m.s_star.inverse() * w);
}

double bold_J(const Mat4d& A, const Vec4d& P, const Vec4d& Q) {
  return 0.5 * P.dot(A * P) + 0.5 * Q.dot(swap_blocks(A) * Q) - P.dot(Q);
}

double min_eigenvalue(const Mat4d& M) {
  const Mat4d sym = 0.5 * (M + M.transpose());
  return Eigen::SelfAdjointEigenSolver<Mat4d>(sym, Eigen::EigenvaluesOnly).eigenvalues()[0];
}

namespace {

void check_tiling(const CGMatrices& parent, const std::vector<CGMatrices>& children) {
  if (children.size() != 9) throw InputError("subadditivity needs the 9 children");
  const auto expect = parent.cube.children();
  const double tol = 1e-9 * parent.cube.side();
  for (std::size_t i = 0; i < 9; ++i) {
    const auto& c = children[i].cube;
    if (c.level != parent.cube.level - 1 || std::abs(c.center[0] - expect[i].center[0]) > tol ||
        std::abs(c.center[1] - expect[i].center[1]) > tol)
      throw InputError("children do not tile the parent cube");
  }
}

}  // namespace

Mat4d subadditivity_defect(const CGMatrices& parent, const std::vector<CGMatrices>& children) {
  check_tiling(parent, children);
  Mat4d avg = Mat4d::Zero();
  for (const auto& c : children) avg += c.A;
  return avg / 9.0 - parent.A;
}

Mat4d subadditivity_defect_dual(const CGMatrices& parent, const std::vector<CGMatrices>& children) {
  return swap_blocks(subadditivity_defect(parent, children));
}

bool InvariantReport::ok(double slack) const {
  const double t = -slack * scale;
  return loewner_sstar_s >= t && loewner_s_b >= t && sym_part_plus >= t && sym_part_minus >= t && b_identity <= 1e-8;
}

InvariantReport check_invariants(const CGMatrices& m) {
  InvariantReport r;
  const Mat2d ksym = m.k + m.k.transpose();
  r.loewner_sstar_s = min_eig2(m.s - m.s_star);
  r.loewner_s_b = min_eig2(m.b - m.s);
  r.sym_part_plus = min_eig2(m.s - m.s_star - ksym);
  r.sym_part_minus = min_eig2(m.s - m.s_star + ksym);
  const Mat2d resid = m.b - m.s - m.k.transpose() * m.s_star.inverse() * m.k;
  r.scale = spectral_norm(m.s);
  r.b_identity = spectral_norm(resid) / std::max(spectral_norm(m.b), std::numeric_limits<double>::min());
  return r;
}

MultiscaleTable multiscale_table(const CoefficientGrid& c, int min_cells_exp, const BlockOptions& opt) {
  c.validate();
  if (min_cells_exp < 1 || min_cells_exp > c.r) throw InputError("finest cube must contain at least 3 cells per side");
  MultiscaleTable t;
  t.m = c.cube.level;
  t.truncation_level = t.m - (c.r - min_cells_exp);
  struct Job {
    int level, I, J;
  };
  std::vector<Job> jobs;
  for (int l = t.truncation_level; l <= t.m; ++l) {
    t.levels.push_back(l);
    const int per = static_cast<int>(ipow3(t.m - l));
    t.cubes.emplace_back(static_cast<std::size_t>(per) * per);
    for (int J = 0; J < per; ++J)
      for (int I = 0; I < per; ++I) jobs.push_back({l, I, J});
  }
  BlockOptions inner = opt;
  if (opt.parallel) {
    inner.parallel = false;
    inner.solve.parallel = false;
  }
  parallel_for(static_cast<int>(jobs.size()), opt.parallel, [&](int k) {
    const Job& jb = jobs[static_cast<std::size_t>(k)];
    const int rs = c.r - (t.m - jb.level);
    const int w = static_cast<int>(ipow3(rs));
    const CoefficientGrid sub = restrict_coefficients(c, jb.I * w, jb.J * w, rs);
    const int per = static_cast<int>(ipow3(t.m - jb.level));
    t.cubes[static_cast<std::size_t>(jb.level - t.truncation_level)][static_cast<std::size_t>(jb.J) * per + jb.I] =
        coarse_grain(sub, inner);
  });
  std::vector<double> w;
  pointwise_blocks(c, t.pointwise, w);
  return t;
}

std::vector<ScaleMaxima> scale_maxima(const MultiscaleTable& t) {
  std::vector<ScaleMaxima> out;
  for (std::size_t i = 0; i < t.levels.size(); ++i) {
    ScaleMaxima s{t.levels[i], 0.0, 0.0};
    for (const auto& m : t.cubes[i]) {
      s.max_b = std::max(s.max_b, spectral_norm(m.b));
      s.max_sstar_inv = std::max(s.max_sstar_inv, spectral_norm(m.A.block<2, 2>(2, 2)));
    }
    out.push_back(s);
  }
  return out;
}

EllipticityConstants ellipticity_constants(const std::vector<ScaleMaxima>& per_scale, int m, double s, double q,
                                           const std::optional<ScaleMaxima>& subgrid) {
  if (per_scale.empty()) throw InputError("ellipticity constants need at least one scale");
  if (!(s > 0.0)) throw InputError("order s must be positive");
  if (!(q >= 1.0)) throw InputError("exponent q must lie in [1, inf]");
  std::vector<ScaleMaxima> sorted = per_scale;
  std::sort(sorted.begin(), sorted.end(), [](const ScaleMaxima& a, const ScaleMaxima& b) { return a.level < b.level; });
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i].level > m || (i > 0 && sorted[i].level != sorted[i - 1].level + 1))
      throw InputError("scales must be consecutive and not exceed m");
  const int L = sorted.front().level;
  const ScaleMaxima tail = subgrid ? *subgrid : sorted.front();
  EllipticityConstants ec;
  ec.s_order = s;
  ec.q_order = q;
  ec.truncation_level = L;
  if (std::isinf(q)) {
    double up = pow3(-2.0 * s * (m - L + 1)) * tail.max_b;
    double lo = pow3(-2.0 * s * (m - L + 1)) * tail.max_sstar_inv;
    for (const auto& e : sorted) {
      up = std::max(up, pow3(-2.0 * s * (m - e.level)) * e.max_b);
      lo = std::max(lo, pow3(-2.0 * s * (m - e.level)) * e.max_sstar_inv);
    }
    ec.Lambda = up;
    ec.lambda = 1.0 / lo;
    return ec;
  }
  const double c = css(s * q);
  double up = pow3(-s * q * (m - L + 1)) * std::pow(tail.max_b, 0.5 * q);
  double lo = pow3(-s * q * (m - L + 1)) * std::pow(tail.max_sstar_inv, 0.5 * q);
  for (const auto& e : sorted) {
    up += c * pow3(-s * q * (m - e.level)) * std::pow(e.max_b, 0.5 * q);
    lo += c * pow3(-s * q * (m - e.level)) * std::pow(e.max_sstar_inv, 0.5 * q);
  }
  ec.Lambda = std::pow(up, 2.0 / q);
  ec.lambda = std::pow(lo, -2.0 / q);
  return ec;
}

EllipticityConstants ellipticity_constants(const MultiscaleTable& t, double s, double q) {
  ScaleMaxima sub{t.truncation_level - 1, 0.0, 0.0};
  for (const auto& A : t.pointwise) {
    sub.max_b = std::max(sub.max_b, spectral_norm(A.block<2, 2>(0, 0)));
    sub.max_sstar_inv = std::max(sub.max_sstar_inv, spectral_norm(A.block<2, 2>(2, 2)));
  }
  return ellipticity_constants(scale_maxima(t), t.m, s, q, sub);
}

double max_bold_J(const Mat4d& A, double s0) {
  if (!(s0 > 0.0)) throw InputError("reference diffusivity must be positive");
  const double r = std::sqrt(s0);
  const Vec4d half(r, r, 1.0 / r, 1.0 / r);
  const Mat4d Dp = half.asDiagonal();
  const Mat4d Dm = half.cwiseInverse().asDiagonal();
  const Mat4d M = 0.5 * (Dm * A * Dm + Dp * swap_blocks(A) * Dp);
  return Eigen::SelfAdjointEigenSolver<Mat4d>(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly).eigenvalues()[3] - 1.0;
}

namespace {

// per-level lists of max_e J (finest first), tail = pointwise values with weights
HomogError aggregate_E(const std::vector<int>& levels, const std::vector<std::vector<double>>& vals,
                       const std::vector<double>& tail, const std::vector<double>& tail_w, double s0, double s,
                       double p, double q, int n) {
  if (!(s > 0.0 && s <= 1.0)) throw InputError("order s must lie in (0, 1]");
  if (!(p >= 1.0) || !(q >= 1.0)) throw InputError("exponents must lie in [1, inf]");
  HomogError he;
  he.s = s;
  he.p = p;
  he.q = q;
  he.n = n;
  he.reference = s0;
  he.truncation_level = levels.front();
  const bool pinf = std::isinf(p), qinf = std::isinf(q);
  auto level_value = [&](const std::vector<double>& v, const std::vector<double>* w) {
    // (avg v^{p/2})^{1/p} or max v^{1/2}
    if (pinf) {
      double mx = 0.0;
      for (double x : v) mx = std::max(mx, std::max(x, 0.0));
      return std::sqrt(mx);
    }
    double acc = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double wi = w ? (*w)[i] : 1.0;
      acc += wi * std::pow(std::max(v[i], 0.0), 0.5 * p);
      wsum += wi;
    }
    return std::pow(acc / wsum, 1.0 / p);
  };
  const int L = levels.front();
  const double tail_val = level_value(tail, &tail_w);
  if (qinf) {
    double best = pow3(-s * (n - L + 1)) * tail_val;
    for (std::size_t i = 0; i < levels.size(); ++i)
      if (levels[i] <= n) best = std::max(best, pow3(-s * (n - levels[i])) * level_value(vals[i], nullptr));
    he.value = best;
    return he;
  }
  const double c = css(s * q);
  double acc = pow3(-s * q * (n - L + 1)) * std::pow(tail_val, q);
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (levels[i] <= n) acc += c * pow3(-s * q * (n - levels[i])) * std::pow(level_value(vals[i], nullptr), q);
  he.value = std::pow(acc, 1.0 / q);
  return he;
}

std::vector<double> vertex_weights(int n) {
  std::vector<double> w;
  for (int b = 0; b <= n; ++b)
    for (int a = 0; a <= n; ++a) w.push_back(((a == 0 || a == n) ? 0.5 : 1.0) * ((b == 0 || b == n) ? 0.5 : 1.0));
  return w;
}

void check_n(int n, int truncation, int m) {
  if (n > m) throw InputError("homogenization error needs n <= m");
  if (n < truncation) throw InputError("n is below the resolved scales");
}

}  // namespace

HomogError homog_error(const MultiscaleTable& t, double s0, double s, double p, double q, int n) {
  check_n(n, t.truncation_level, t.m);
  std::vector<std::vector<double>> vals;
  for (const auto& lvl : t.cubes) {
    std::vector<double> v;
    for (const auto& m : lvl) v.push_back(max_bold_J(m.A, s0));
    vals.push_back(std::move(v));
  }
  std::vector<double> tail;
  for (const auto& A : t.pointwise) tail.push_back(max_bold_J(A, s0));
  const int nside = static_cast<int>(std::lround(std::sqrt(static_cast<double>(t.pointwise.size())))) - 1;
  return aggregate_E(t.levels, vals, tail, vertex_weights(nside), s0, s, p, q, n);
}

double max_bold_J_direct(const CoefficientGrid& c, double s0, const solver::SolveOptions& opt) {
  if (!(s0 > 0.0)) throw InputError("reference diffusivity must be positive");
  const double r = std::sqrt(s0);
  const Vec4d half(r, r, 1.0 / r, 1.0 / r);
  const Mat4d R = swap_matrix();
  // F(e) = mu(A0^{-1/2} e) + mu(R A0^{1/2} e), a quadratic form in e
  auto F = [&](const Vec4d& e) {
    const Vec4d P = half.cwiseInverse().cwiseProduct(e);
    const Vec4d Q = R * half.cwiseProduct(e);
    return solver::solve_block_minimization(c, to_array(P), opt).energy +
           solver::solve_block_minimization(c, to_array(Q), opt).energy;
  };
  Vec4d diag;
  for (int i = 0; i < 4; ++i) diag[i] = F(Vec4d::Unit(i));
  Mat4d Qf = Mat4d::Zero();
  for (int i = 0; i < 4; ++i) {
    Qf(i, i) = 2.0 * diag[i];
    for (int j = i + 1; j < 4; ++j) Qf(i, j) = Qf(j, i) = F(Vec4d::Unit(i) + Vec4d::Unit(j)) - diag[i] - diag[j];
  }
  return 0.5 * Eigen::SelfAdjointEigenSolver<Mat4d>(Qf, Eigen::EigenvaluesOnly).eigenvalues()[3] - 1.0;
}

HomogError homog_error_direct(const CoefficientGrid& c, int min_cells_exp, double s0, double s, double p, double q,
                              int n, const solver::SolveOptions& opt) {
  c.validate();
  if (min_cells_exp < 1 || min_cells_exp > c.r) throw InputError("finest cube must contain at least 3 cells per side");
  const int m = c.cube.level;
  const int L = m - (c.r - min_cells_exp);
  check_n(n, L, m);
  std::vector<int> levels;
  std::vector<std::vector<double>> vals;
  for (int l = L; l <= n; ++l) {
    levels.push_back(l);
    const int per = static_cast<int>(ipow3(m - l));
    const int rs = c.r - (m - l);
    const int w = static_cast<int>(ipow3(rs));
    std::vector<double> v(static_cast<std::size_t>(per) * per);
    for (int J = 0; J < per; ++J)
      for (int I = 0; I < per; ++I)
        v[static_cast<std::size_t>(J) * per + I] = max_bold_J_direct(restrict_coefficients(c, I * w, J * w, rs), s0, opt);
    vals.push_back(std::move(v));
  }
  std::vector<Mat4d> blocks;
  std::vector<double> wts;
  pointwise_blocks(c, blocks, wts);
  std::vector<double> tail;
  for (const auto& A : blocks) tail.push_back(max_bold_J(A, s0));
  return aggregate_E(levels, vals, tail, wts, s0, s, p, q, n);
}

void write_cube_csv(const std::vector<CGMatrices>& cubes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "level,cx,cy,field_level";
  for (const char* name : {"s", "s_star", "k", "b"})
    for (const char* ij : {"11", "12", "21", "22"}) out << ',' << name << ij;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) out << ",A" << i << j;
  out << '\n' << std::setprecision(17);
  for (const auto& m : cubes) {
    out << m.cube.level << ',' << m.cube.center[0] << ',' << m.cube.center[1] << ',' << m.field_level;
    for (const Mat2d* M : {&m.s, &m.s_star, &m.k, &m.b})
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) out << ',' << (*M)(i, j);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) out << ',' << m.A(i, j);
    out << '\n';
  }
}

void write_constants_csv(const std::vector<EllipticityConstants>& ec, const std::vector<HomogError>& he,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "quantity,s,p,q,n,reference,value,truncation_level\n" << std::setprecision(17);
  for (const auto& e : ec) {
    out << "lambda," << e.s_order << ",," << e.q_order << ",,," << e.lambda << ',' << e.truncation_level << '\n';
    out << "Lambda," << e.s_order << ",," << e.q_order << ",,," << e.Lambda << ',' << e.truncation_level << '\n';
  }
  for (const auto& h : he)
    out << "E," << h.s << ',' << h.p << ',' << h.q << ',' << h.n << ',' << h.reference << ',' << h.value << ','
        << h.truncation_level << '\n';
}

}  // namespace superlab::coarsegrain

#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "superlab/common.hpp"
#include "superlab/field.hpp"
#include "superlab/grid.hpp"

namespace superlab::solver {

// Coefficients a = nu I + kappa [[0,1],[-1,0]] on the dual mesh: one value per grid vertex,
// (n+1)^2 vertices, vertex (a, b) at cube corner + (a h, b h).
struct CoefficientGrid {
  grid::TriadicCube cube;
  int r = 0;
  int n = 1;
  double nu = 1.0;
  std::vector<double> kappa;
  std::vector<double> nu_vertex;  // empty: constant nu
  int field_level = 0;

  double h() const { return cube.side() / n; }
  Vec2 vertex(int a, int b) const;
  double kappa_at(int a, int b) const { return kappa[static_cast<std::size_t>(b) * (n + 1) + a]; }
  double nu_at(int a, int b) const {
    return nu_vertex.empty() ? nu : nu_vertex[static_cast<std::size_t>(b) * (n + 1) + a];
  }
  void validate() const;
};

CoefficientGrid constant_coefficients(grid::TriadicCube cube, int r, double nu, double kappa0 = 0.0);
// kappa from the stream field truncated at scale m_field (scales scale_min..m_field)
CoefficientGrid field_coefficients(const field::FieldParams& p, grid::TriadicCube cube, int r, int m_field);
// ν(x1) alternating between nu_a and nu_b every stripe_width vertex columns
CoefficientGrid laminate_coefficients(grid::TriadicCube cube, int r, double nu_a, double nu_b, int stripe_width = 1);
// same field on a triadic sub-block of cells
CoefficientGrid restrict_coefficients(const CoefficientGrid& c, int i0, int j0, int rs);
CoefficientGrid scaled(const CoefficientGrid& c, double lambda);
CoefficientGrid negated_kappa(const CoefficientGrid& c);

// 3-adic grid adequacy: 3^{n_min} >= 9 h
void check_grid_adequacy(const field::FieldParams& p, grid::TriadicCube cube, int r);

struct SolveReport {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

enum class Preconditioner { FastPoisson, Jacobi };

struct SolveOptions {
  double tol = 1e-10;
  int max_iter = -1;  // default 20 N^2
  int restart = 50;
  Preconditioner preconditioner = Preconditioner::FastPoisson;
  bool parallel = true;
  bool direct = false;  // sparse LU instead of GMRES (Dirichlet problems)
};

using BoundaryTrace = std::function<double(Vec2)>;

struct DirichletResult {
  grid::GridFunction u;
  SolveReport report;
};

// -div(a grad u) = div g in U, u = h on the boundary. g1/g2 may be empty (g = 0).
DirichletResult solve_dirichlet(const CoefficientGrid& c, const grid::GridFunction* g1, const grid::GridFunction* g2,
                                const BoundaryTrace& h, const SolveOptions& opt = {});

struct BlockResult {
  grid::GridFunction u;
  grid::GridFunction psi;
  double energy = 0.0;
  SolveReport report;
  bool positive_definite = true;
};

using Vec4 = std::array<double, 4>;

BlockResult solve_block_minimization(const CoefficientGrid& c, const Vec4& P, const SolveOptions& opt = {});
// Sparse Cholesky factorization of the block system, reused across block vectors.
class BlockFactor {
 public:
  explicit BlockFactor(const CoefficientGrid& c);
  ~BlockFactor();
  BlockFactor(BlockFactor&&) noexcept;
  BlockFactor& operator=(BlockFactor&&) noexcept;
  BlockResult solve(const Vec4& P) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// energy of X = P + (grad u, J grad psi) for given u, psi (zero boundary values)
double block_energy(const CoefficientGrid& c, const Vec4& P, const grid::GridFunction& u, const grid::GridFunction& psi);

// Discrete operator pieces, exposed for verification.
struct Stencil9 {
  int n = 0;
  std::vector<std::array<double, 9>> c;  // offset (di + 1) + 3 (dj + 1)
  void apply(const double* x, double* y, bool parallel = true) const;
  void apply_serial(const double* x, double* y) const;
};

Stencil9 dirichlet_operator(const CoefficientGrid& c);
Stencil9 nu_operator(const CoefficientGrid& c);
Stencil9 kappa_operator(const CoefficientGrid& c);
std::vector<double> dirichlet_rhs(const CoefficientGrid& c, const grid::GridFunction* g1,
                                  const grid::GridFunction* g2, const BoundaryTrace& h);
// integral of nu |grad Q u|^2 for u with zero boundary values
double nu_energy(const CoefficientGrid& c, const std::vector<double>& u);

// Exact inverse of the unit-coefficient stiffness operator (fast sine transforms).
class FastPoisson {
 public:
  explicit FastPoisson(int n);
  ~FastPoisson();
  FastPoisson(const FastPoisson&) = delete;
  FastPoisson& operator=(const FastPoisson&) = delete;
  void solve(const double* r, double* x) const;

 private:
  int n_;
  std::vector<double> eig_;
  void* fwd_ = nullptr;
  void* inv_ = nullptr;
};

void write_triplets(const Stencil9& s, const std::string& path);

}  // namespace superlab::solver

#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "superlab/solver.hpp"

namespace superlab::coarsegrain {

using Mat2d = Eigen::Matrix2d;
using Mat4d = Eigen::Matrix4d;
using Vec2d = Eigen::Vector2d;
using Vec4d = Eigen::Vector4d;

struct CGMatrices {
  Mat2d s = Mat2d::Zero();
  Mat2d s_star = Mat2d::Zero();
  Mat2d k = Mat2d::Zero();
  Mat2d b = Mat2d::Zero();
  Mat4d A = Mat4d::Zero();
  grid::TriadicCube cube;
  int field_level = 0;
};

enum class PairMode { Superposition, DirectSolves };
enum class BlockMethod { Factorized, Iterative };

struct BlockOptions {
  solver::SolveOptions solve;
  PairMode pairs = PairMode::Superposition;
  BlockMethod method = BlockMethod::Factorized;
  bool parallel = true;  // run the basis solves concurrently
};

// pointwise block matrix of a = s + k
Mat4d pointwise_block(const Mat2d& s, const Mat2d& k);
Mat4d pointwise_block(double nu, double kappa);
Mat4d swap_blocks(const Mat4d& A);  // R A R

Mat4d compute_block_matrix(const solver::CoefficientGrid& c, const BlockOptions& opt = {});
CGMatrices extract_cg_matrices(const Mat4d& A, grid::TriadicCube cube = {}, int field_level = 0);
Mat4d assemble_block(const CGMatrices& m);
CGMatrices coarse_grain(const solver::CoefficientGrid& c, const BlockOptions& opt = {});

double compute_J(const CGMatrices& m, const Vec2d& p, const Vec2d& q);
double compute_J_block(const Mat4d& A, const Vec2d& p, const Vec2d& q);
double compute_J_adjoint(const Mat4d& A, const Vec2d& p, const Vec2d& q);
double compute_J_split(const CGMatrices& m, const Vec2d& p, const Vec2d& q);
double bold_J(const Mat4d& A, const Vec4d& P, const Vec4d& Q);

// avg(children) - parent, for A and for the swapped blocks R A R
Mat4d subadditivity_defect(const CGMatrices& parent, const std::vector<CGMatrices>& children);
Mat4d subadditivity_defect_dual(const CGMatrices& parent, const std::vector<CGMatrices>& children);
double min_eigenvalue(const Mat4d& M);

struct InvariantReport {
  double loewner_sstar_s = 0.0;   // min eig (s - s_star), symmetric parts
  double loewner_s_b = 0.0;       // min eig (b - s)
  double sym_part_plus = 0.0;     // min eig (s - s_star - (k + k^t))
  double sym_part_minus = 0.0;    // min eig (s - s_star + (k + k^t))
  double b_identity = 0.0;        // |b - s - k^t s_star^{-1} k| / |b|
  double scale = 0.0;             // |s|
  bool ok(double slack) const;
};
InvariantReport check_invariants(const CGMatrices& m);

// Coarse-grained matrices on every triadic subcube at resolved levels.
struct MultiscaleTable {
  int m = 0;
  int truncation_level = 0;  // finest resolved cube level
  std::vector<int> levels;    // truncation_level..m
  std::vector<std::vector<CGMatrices>> cubes;  // per level, row-major tiling
  std::vector<Mat4d> pointwise;  // vertex block matrices (sub-grid limit)
  const std::vector<CGMatrices>& at(int level) const { return cubes[static_cast<std::size_t>(level - truncation_level)]; }
};

MultiscaleTable multiscale_table(const solver::CoefficientGrid& c, int min_cells_exp = 2, const BlockOptions& opt = {});

struct ScaleMaxima {
  int level = 0;
  double max_b = 0.0;           // max over cubes of |b|
  double max_sstar_inv = 0.0;   // max over cubes of |s_star^{-1}|
};

struct EllipticityConstants {
  double lambda = 0.0;
  double Lambda = 0.0;
  double s_order = 0.0;
  double q_order = 0.0;
  int truncation_level = 0;
};

std::vector<ScaleMaxima> scale_maxima(const MultiscaleTable& t);
// per_scale covers truncation_level..m; subgrid (level = truncation_level - 1 entry) carries the
// weight of all finer scales; without it the finest entry does.
EllipticityConstants ellipticity_constants(const std::vector<ScaleMaxima>& per_scale, int m, double s, double q,
                                           const std::optional<ScaleMaxima>& subgrid = std::nullopt);
EllipticityConstants ellipticity_constants(const MultiscaleTable& t, double s, double q);

struct HomogError {
  double value = 0.0;
  double s = 0.0, p = 0.0, q = 0.0;
  double reference = 0.0;
  int n = 0;
  int truncation_level = 0;
};

// max over |e| = 1 of bold J(U, A0^{-1/2} e, A0^{1/2} e) for scalar a0 = s0
double max_bold_J(const Mat4d& A, double s0);
HomogError homog_error(const MultiscaleTable& t, double s0, double s, double p, double q, int n);
// direct route: quadratic form in e assembled from block-minimization energies, no matrix extraction
double max_bold_J_direct(const solver::CoefficientGrid& c, double s0, const solver::SolveOptions& opt = {});
HomogError homog_error_direct(const solver::CoefficientGrid& c, int min_cells_exp, double s0, double s, double p,
                              double q, int n, const solver::SolveOptions& opt = {});

void write_cube_csv(const std::vector<CGMatrices>& cubes, const std::string& path);
void write_constants_csv(const std::vector<EllipticityConstants>& ec, const std::vector<HomogError>& he,
                         const std::string& path);

}  // namespace superlab::coarsegrain

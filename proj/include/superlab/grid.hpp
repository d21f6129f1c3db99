#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "superlab/common.hpp"

namespace superlab::grid {

struct TriadicCube {
  int level = 0;
  Vec2 center{0.0, 0.0};

  double side() const { return pow3(static_cast<double>(level)); }
  bool contains(Vec2 x) const;
  // children ordered row-major from the lower-left corner
  std::vector<TriadicCube> children() const;
};

class GridFunction {
 public:
  GridFunction() = default;
  GridFunction(TriadicCube cube, int r, double fill = 0.0);

  const TriadicCube& cube() const { return cube_; }
  int r() const { return r_; }
  int n() const { return n_; }
  double h() const { return cube_.side() / n_; }
  Vec2 cell_center(int i, int j) const;

  double& operator()(int i, int j) { return v_[static_cast<std::size_t>(j) * n_ + i]; }
  double operator()(int i, int j) const { return v_[static_cast<std::size_t>(j) * n_ + i]; }
  std::vector<double>& values() { return v_; }
  const std::vector<double>& values() const { return v_; }

  void check_finite() const;
  double mean() const;

  // cells [i0, i0 + 3^rs) x [j0, j0 + 3^rs) of a triadic sub-block
  GridFunction sub_block(int i0, int j0, int rs) const;

 private:
  TriadicCube cube_;
  int r_ = 0;
  int n_ = 1;
  std::vector<double> v_;
};

GridFunction sample(TriadicCube cube, int r, const auto& f) {
  GridFunction g(cube, r);
  for (int j = 0; j < g.n(); ++j)
    for (int i = 0; i < g.n(); ++i) g(i, j) = f(g.cell_center(i, j));
  return g;
}

GridFunction triadic_average(const GridFunction& f, int l);

double besov_seminorm(const GridFunction& f, double s, double p, double q);
double neg_besov_seminorm(const GridFunction& f, double s, double p, double q);

struct HolderOptions {
  int exact_threshold = 81;
  int anchors = 64;
  std::uint64_t seed = 0x401de5ULL;
};

double holder_seminorm(const GridFunction& f, double alpha, const HolderOptions& opt = {});
// restricted to cells with i in [i0, i1) and j in [j0, j1)
double holder_seminorm_window(const GridFunction& f, double alpha, int i0, int i1, int j0, int j1,
                              const HolderOptions& opt = {});

void write_csv(const GridFunction& f, const std::string& path);
GridFunction read_csv(const std::string& path);

}  // namespace superlab::grid

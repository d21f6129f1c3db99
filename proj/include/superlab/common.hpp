#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace superlab {

using Vec2 = std::array<double, 2>;
using Mat2 = std::array<double, 4>;  // row-major

inline const double kLog3 = std::log(3.0);

struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ScaleRangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SolveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double pow3(double e) { return std::pow(3.0, e); }

inline long ipow3(int e) {
  long r = 1;
  for (int i = 0; i < e; ++i) r *= 3;
  return r;
}

}  // namespace superlab

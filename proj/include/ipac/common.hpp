// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ipac {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr cplx kI{0.0, 1.0};

// In-plane position (meters). Elements sit on z = 0, the medium at z > 0.
struct Vec2 {
  double x = 0.0;
  double z = 0.0;
};

inline double distance(const Vec2& a, const Vec2& b) {
  return std::hypot(a.x - b.x, a.z - b.z);
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidPulseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularMatrixError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoScattererError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UndefinedMetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ipac

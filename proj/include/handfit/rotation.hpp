#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "handfit/errors.hpp"

namespace handfit {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline Mat3 skew(const Vec3& v) {
  Mat3 k;
  k << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return k;
}

namespace detail {

// Series cut-over for sin(t)/t, (1-cos t)/t^2 and (t-sin t)/t^3.
inline constexpr double kSmallAngle = 1e-4;

inline double sinc(double t) { return t < kSmallAngle ? 1.0 - t * t / 6.0 : std::sin(t) / t; }

inline double one_minus_cos_over_sq(double t) {
  return t < kSmallAngle ? 0.5 - t * t / 24.0 : (1.0 - std::cos(t)) / (t * t);
}

inline double t_minus_sin_over_cube(double t) {
  return t < kSmallAngle ? 1.0 / 6.0 - t * t / 120.0 : (t - std::sin(t)) / (t * t * t);
}

}  // namespace detail

/// Rodrigues' formula. Total: the zero vector maps to the identity.
inline Mat3 axis_angle_to_matrix(const Vec3& v) {
  const double t = v.norm();
  const Mat3 k = skew(v);
  return Mat3::Identity() + detail::sinc(t) * k + detail::one_minus_cos_over_sq(t) * k * k;
}

/// Right Jacobian of the exponential map: R(v + dv) ~= R(v) * exp([J_r(v) dv]x).
inline Mat3 right_jacobian(const Vec3& v) {
  const double t = v.norm();
  const Mat3 k = skew(v);
  return Mat3::Identity() - detail::one_minus_cos_over_sq(t) * k + detail::t_minus_sin_over_cube(t) * k * k;
}

inline bool is_rotation(const Mat3& r, double tol = 1e-6) {
  if (!r.allFinite()) return false;
  const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

/// Inverse of axis_angle_to_matrix with the angle in [0, pi].
/// Throws ParameterError when `r` is not a proper rotation within 1e-6.
inline Vec3 matrix_to_axis_angle(const Mat3& r) {
  if (!is_rotation(r)) throw ParameterError("matrix_to_axis_angle: input is not a proper rotation");

  // w = sin(angle) * axis
  const Vec3 w(0.5 * (r(2, 1) - r(1, 2)), 0.5 * (r(0, 2) - r(2, 0)), 0.5 * (r(1, 0) - r(0, 1)));
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  const double s = w.norm();
  const double angle = std::atan2(s, c);

  if (c > -0.9) {
    if (angle < detail::kSmallAngle) return w / detail::sinc(angle);
    return w * (angle / s);
  }

  // Near pi the antisymmetric part vanishes; read the axis off (R + R^T)/2 - c I = (1 - c) a a^T.
  const Mat3 m = 0.5 * (r + r.transpose()) - c * Mat3::Identity();
  Eigen::Index k = 0;
  m.diagonal().maxCoeff(&k);
  Vec3 axis = m.col(k).normalized();
  if (axis.dot(w) < 0.0) axis = -axis;
  return axis * angle;
}

}  // namespace handfit

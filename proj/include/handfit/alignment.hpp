#pragma once

#include <Eigen/Core>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "handfit/errors.hpp"
#include "handfit/hand_model.hpp"
#include "handfit/jacobi.hpp"
#include "handfit/keypoints.hpp"
#include "handfit/rotation.hpp"

namespace handfit {

/// Similarity transform p -> scale * rotation * p + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  static RigidTransform identity() { return {}; }

  /// Top-left block is scale * rotation, right column the translation, bottom row (0, 0, 0, 1).
  Eigen::Matrix4d as_homogeneous() const {
    Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
    h.topLeftCorner<3, 3>() = scale * rotation;
    h.topRightCorner<3, 1>() = translation;
    return h;
  }

  bool valid(double tol = 1e-6) const { return is_rotation(rotation, tol) && scale > 0.0 && translation.allFinite(); }
};

inline Vec3 apply_to(const RigidTransform& t, const Vec3& p) { return t.scale * (t.rotation * p) + t.translation; }

inline Joints apply_to(const RigidTransform& t, const Joints& pts) {
  Joints out;
  for (int j = 0; j < kNumJoints; ++j) out[j] = apply_to(t, pts[j]);
  return out;
}

inline std::vector<Vec3> apply_to(const RigidTransform& t, std::span<const Vec3> pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(apply_to(t, p));
  return out;
}

inline RigidTransform invert(const RigidTransform& t) {
  RigidTransform inv;
  inv.rotation = t.rotation.transpose();
  inv.scale = 1.0 / t.scale;
  inv.translation = -inv.scale * (inv.rotation * t.translation);
  return inv;
}

/// outer after inner: apply_to(compose(outer, inner), p) == apply_to(outer, apply_to(inner, p)).
inline RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner) {
  RigidTransform c;
  c.rotation = outer.rotation * inner.rotation;
  c.scale = outer.scale * inner.scale;
  c.translation = outer.scale * (outer.rotation * inner.translation) + outer.translation;
  return c;
}

namespace detail {

inline void check_pair(std::span<const Vec3> src, std::span<const Vec3> dst, std::size_t min_count) {
  if (src.size() != dst.size())
    throw ParameterError("point count mismatch: " + std::to_string(src.size()) + " vs " + std::to_string(dst.size()));
  if (src.size() < min_count) throw ParameterError("need at least " + std::to_string(min_count) + " points");
  for (std::size_t i = 0; i < src.size(); ++i)
    if (!src[i].allFinite() || !dst[i].allFinite()) throw ParameterError("non-finite point in alignment input");
}

inline Vec3 centroid(std::span<const Vec3> pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

inline Mat3 quaternion_to_matrix(const Eigen::Vector4d& q_in) {
  const Eigen::Vector4d q = q_in.normalized();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x),   //
      2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z;
  return r;
}

// Least-squares rotation src -> dst about the centroids (Horn's unit-quaternion method).
// The maximizing eigenvector of the 4x4 profile matrix is always a proper rotation,
// so reflections never need a separate correction.
inline Mat3 optimal_rotation(std::span<const Vec3> src, std::span<const Vec3> dst, const Vec3& cs, const Vec3& cd) {
  Mat3 s = Mat3::Zero();
  Mat3 scatter_src = Mat3::Zero(), scatter_dst = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = src[i] - cs, b = dst[i] - cd;
    s += a * b.transpose();
    scatter_src += a * a.transpose();
    scatter_dst += b * b.transpose();
  }
  // A rank-one spread leaves the rotation about the line undetermined.
  auto check = [](const Mat3& scatter, const char* which) {
    const auto spread = jacobi_eigen<3>(scatter);
    if (!(spread.values[0] > 0.0) || spread.values[1] <= 1e-12 * spread.values[0])
      throw DegenerateError(std::string(which) + " points are coincident or collinear");
  };
  check(scatter_src, "source");
  check(scatter_dst, "target");

  Eigen::Matrix4d n;
  n << s(0, 0) + s(1, 1) + s(2, 2), s(1, 2) - s(2, 1), s(2, 0) - s(0, 2), s(0, 1) - s(1, 0),  //
      s(1, 2) - s(2, 1), s(0, 0) - s(1, 1) - s(2, 2), s(0, 1) + s(1, 0), s(2, 0) + s(0, 2),   //
      s(2, 0) - s(0, 2), s(0, 1) + s(1, 0), -s(0, 0) + s(1, 1) - s(2, 2), s(1, 2) + s(2, 1),  //
      s(0, 1) - s(1, 0), s(2, 0) + s(0, 2), s(1, 2) + s(2, 1), -s(0, 0) - s(1, 1) + s(2, 2);
  return quaternion_to_matrix(jacobi_eigen<4>(n).vectors.col(0));
}

}  // namespace detail

/// Rotation and translation minimizing sum |R src_i + t - dst_i|^2, scale fixed at 1.
inline RigidTransform estimate_rigid(std::span<const Vec3> src, std::span<const Vec3> dst) {
  detail::check_pair(src, dst, 3);
  const Vec3 cs = detail::centroid(src);
  const Vec3 cd = detail::centroid(dst);
  RigidTransform t;
  t.rotation = detail::optimal_rotation(src, dst, cs, cd);
  t.translation = cd - t.rotation * cs;
  return t;
}

/// Rotation, translation and least-squares uniform scale (Umeyama's asymmetric form).
inline RigidTransform estimate_similarity(std::span<const Vec3> src, std::span<const Vec3> dst) {
  detail::check_pair(src, dst, 3);
  const Vec3 cs = detail::centroid(src);
  const Vec3 cd = detail::centroid(dst);
  RigidTransform t;
  t.rotation = detail::optimal_rotation(src, dst, cs, cd);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = t.rotation * (src[i] - cs);
    num += a.dot(dst[i] - cd);
    den += a.squaredNorm();
  }
  if (!(num > 0.0)) throw DegenerateError("similarity scale is not positive");
  t.scale = num / den;
  t.translation = cd - t.scale * (t.rotation * cs);
  return t;
}

/// |dst_b - dst_a| / |src_b - src_a|.
inline double estimate_scale(const Vec3& src_a, const Vec3& src_b, const Vec3& dst_a, const Vec3& dst_b) {
  const double ds = (src_b - src_a).norm();
  const double dd = (dst_b - dst_a).norm();
  if (!(ds > 0.0)) throw DegenerateError("source scale reference has zero length");
  if (!(dd > 0.0)) throw DegenerateError("target scale reference has zero length");
  return dd / ds;
}

/// Wrist (0) to index MCP (5) length ratio.
inline double estimate_scale(const KeypointSet& src, const KeypointSet& dst) {
  if (!src.valid[0] || !src.valid[5] || !dst.valid[0] || !dst.valid[5])
    throw ParameterError("estimate_scale needs keypoints 0 and 5 valid in both sets");
  return estimate_scale(src.points[0], src.points[5], dst.points[0], dst.points[5]);
}

inline std::vector<Vec3> gather(const Joints& pts, std::span<const int> idx) {
  std::vector<Vec3> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(pts[i]);
  return out;
}

}  // namespace handfit

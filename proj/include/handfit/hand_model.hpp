#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "handfit/errors.hpp"
#include "handfit/rotation.hpp"

namespace handfit {

inline constexpr int kNumJoints = 21;
inline constexpr int kNumBones = kNumJoints - 1;
inline constexpr int kNumArticulated = 15;
inline constexpr int kNumPoseDof = 3 * kNumArticulated;
inline constexpr int kNumShape = 10;
inline constexpr int kNumRootDof = 3;

/// Articulated joints in MediaPipe index order; joint kArticulated[k] owns theta[3k..3k+2].
inline constexpr std::array<int, kNumArticulated> kArticulated = {1, 2, 3, 5, 6, 7, 9, 10, 11, 13, 14, 15, 17, 18, 19};
inline constexpr std::array<int, 5> kFingertips = {4, 8, 12, 16, 20};
inline constexpr std::array<int, 6> kPalmAnchors = {0, 1, 5, 9, 13, 17};

enum class Handedness { left, right };

inline std::string_view to_string(Handedness h) { return h == Handedness::left ? "left" : "right"; }

inline Handedness parse_handedness(std::string_view s) {
  if (s == "left") return Handedness::left;
  if (s == "right") return Handedness::right;
  throw ParameterError("unknown handedness '" + std::string(s) + "'");
}

inline bool is_fingertip(int j) {
  for (int t : kFingertips)
    if (t == j) return true;
  return false;
}

struct JointLimit {
  double lower = 0.0;
  double upper = 0.0;
};

using Joints = std::array<Vec3, kNumJoints>;
using PoseVector = Eigen::Matrix<double, kNumPoseDof, 1>;
using ShapeVector = Eigen::Matrix<double, kNumShape, 1>;
using ShapeBasis = Eigen::Matrix<double, kNumShape, kNumBones>;

/// Optimization variables: articulation, shape and global orientation.
struct PoseState {
  PoseVector theta = PoseVector::Zero();
  ShapeVector beta = ShapeVector::Zero();
  Vec3 root = Vec3::Zero();

  static PoseState from_spans(std::span<const double> theta, std::span<const double> beta,
                              std::span<const double> root) {
    if (theta.size() != kNumPoseDof || beta.size() != kNumShape || root.size() != kNumRootDof)
      throw ParameterError("PoseState expects 45/10/3 values, got " + std::to_string(theta.size()) + "/" +
                           std::to_string(beta.size()) + "/" + std::to_string(root.size()));
    PoseState s;
    for (int i = 0; i < kNumPoseDof; ++i) s.theta[i] = theta[i];
    for (int i = 0; i < kNumShape; ++i) s.beta[i] = beta[i];
    for (int i = 0; i < kNumRootDof; ++i) s.root[i] = root[i];
    return s;
  }

  bool all_finite() const { return theta.allFinite() && beta.allFinite() && root.allFinite(); }

  Vec3 joint_theta(int slot) const { return theta.segment<3>(3 * slot); }
};

/// Joints-only kinematic hand model. Bone b connects parent(b + 1) to joint b + 1.
/// Immutable once constructed; the constructor enforces the model invariants.
class HandModel {
 public:
  HandModel(const Joints& rest_joints, const std::array<int, kNumJoints>& parent, const ShapeBasis& shape_basis,
            const std::array<JointLimit, kNumPoseDof>& joint_limits, Handedness handedness = Handedness::right)
      : rest_(rest_joints), parent_(parent), basis_(shape_basis), limits_(joint_limits), handedness_(handedness) {
    validate_and_index();
  }

  const Joints& rest_joints() const { return rest_; }
  const std::array<int, kNumJoints>& parents() const { return parent_; }
  int parent(int j) const { return parent_[j]; }
  const ShapeBasis& shape_basis() const { return basis_; }
  const std::array<JointLimit, kNumPoseDof>& joint_limits() const { return limits_; }
  Handedness handedness() const { return handedness_; }

  /// Joints with parents before children, starting at the root.
  const std::array<int, kNumJoints>& order() const { return order_; }
  /// theta slot of joint j, or -1 for joints without articulation (wrist, fingertips).
  int dof_slot(int j) const { return slot_[j]; }
  bool is_descendant(int j, int ancestor) const { return desc_[ancestor][j]; }

  Vec3 rest_bone(int child) const { return rest_[child] - rest_[parent_[child]]; }
  double rest_bone_length(int child) const { return rest_bone(child).norm(); }

 private:
  void validate_and_index() {
    if (parent_[0] != -1) throw ParameterError("joint 0 must be the root (parent -1)");
    for (int j = 1; j < kNumJoints; ++j) {
      if (parent_[j] < 0 || parent_[j] >= kNumJoints || parent_[j] == j)
        throw ParameterError("joint " + std::to_string(j) + " has invalid parent " + std::to_string(parent_[j]));
    }
    // Every node must reach the root within kNumJoints steps, otherwise there is a cycle.
    for (int j = 0; j < kNumJoints; ++j) {
      int k = j;
      int steps = 0;
      while (k != 0 && steps <= kNumJoints) {
        k = parent_[k];
        ++steps;
      }
      if (k != 0) throw ParameterError("parent array has a cycle through joint " + std::to_string(j));
    }
    for (int j = 0; j < kNumJoints; ++j) {
      if (!rest_[j].allFinite()) throw ParameterError("rest joint " + std::to_string(j) + " is not finite");
    }
    for (int c = 1; c < kNumJoints; ++c) {
      if (!(rest_bone_length(c) > 0.0)) throw ParameterError("bone to joint " + std::to_string(c) + " has zero length");
    }
    for (int i = 0; i < kNumPoseDof; ++i) {
      const auto& l = limits_[i];
      if (!(l.lower < l.upper)) throw ParameterError("joint limit " + std::to_string(i) + " has lower >= upper");
      if (!(l.lower <= 0.0 && 0.0 <= l.upper))
        throw ParameterError("joint limit " + std::to_string(i) + " excludes the rest pose");
    }
    if (!basis_.allFinite()) throw ParameterError("shape basis is not finite");

    for (int a = 0; a < kNumJoints; ++a)
      for (int j = 0; j < kNumJoints; ++j) {
        bool d = false;
        for (int k = j; k != -1 && j != a; k = parent_[k]) {
          if (parent_[k] == a) {
            d = true;
            break;
          }
        }
        desc_[a][j] = d;
      }

    // Breadth-first order from the root.
    int head = 0, tail = 0;
    order_[tail++] = 0;
    while (head < tail) {
      const int p = order_[head++];
      for (int c = 0; c < kNumJoints; ++c)
        if (parent_[c] == p) order_[tail++] = c;
    }

    slot_.fill(-1);
    for (int k = 0; k < kNumArticulated; ++k) slot_[kArticulated[k]] = k;
  }

  Joints rest_;
  std::array<int, kNumJoints> parent_;
  ShapeBasis basis_;
  std::array<JointLimit, kNumPoseDof> limits_;
  Handedness handedness_;

  std::array<int, kNumJoints> order_{};
  std::array<int, kNumJoints> slot_{};
  std::array<std::array<bool, kNumJoints>, kNumJoints> desc_{};
};

/// Built-in right-hand skeleton in meters. Palm faces -z, fingers extend along +y,
/// the thumb lies on the -x side. Matches data/hand_model.txt.
inline HandModel default_hand_model() {
  const Joints rest = {
      Vec3(0.000, 0.000, 0.000),                                                                   // wrist
      Vec3(-0.020, 0.025, -0.010), Vec3(-0.040, 0.045, -0.015), Vec3(-0.055, 0.065, -0.018), Vec3(-0.065, 0.085, -0.020),
      Vec3(-0.022, 0.090, 0.000),  Vec3(-0.025, 0.130, 0.000),  Vec3(-0.027, 0.155, 0.000),  Vec3(-0.028, 0.175, 0.000),
      Vec3(0.000, 0.092, 0.000),   Vec3(0.000, 0.136, 0.000),   Vec3(0.000, 0.163, 0.000),   Vec3(0.000, 0.185, 0.000),
      Vec3(0.020, 0.087, 0.000),   Vec3(0.022, 0.126, 0.000),   Vec3(0.024, 0.151, 0.000),   Vec3(0.025, 0.171, 0.000),
      Vec3(0.038, 0.078, 0.000),   Vec3(0.042, 0.106, 0.000),   Vec3(0.044, 0.124, 0.000),   Vec3(0.046, 0.140, 0.000),
  };
  const std::array<int, kNumJoints> parent = {-1, 0, 1, 2, 3, 0, 5, 6, 7, 0, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19};

  // mode 0: uniform; 1-5: per finger; 6-9: per phalanx row (metacarpal, proximal, middle, distal)
  ShapeBasis basis = ShapeBasis::Zero();
  basis.row(0).setOnes();
  for (int b = 0; b < kNumBones; ++b) {
    basis(1 + b / 4, b) = 1.0;
    basis(6 + b % 4, b) = 1.0;
  }

  std::array<JointLimit, kNumPoseDof> limits{};
  for (int k = 0; k < kNumArticulated; ++k) {
    const int joint = kArticulated[k];
    JointLimit* l = &limits[3 * k];
    if (joint <= 3) {
      l[0] = {-1.0, 0.5};  // flexion about x
      l[1] = {-0.5, 0.5};  // twist
      l[2] = {-0.6, 0.6};  // abduction
    } else {
      const bool mcp = (joint - 1) % 4 == 0;
      l[0] = {-1.6, 0.3};
      l[1] = {-0.2, 0.2};
      l[2] = mcp ? JointLimit{-0.5, 0.5} : JointLimit{-0.3, 0.3};
    }
  }
  return HandModel(rest, parent, basis, limits, Handedness::right);
}

namespace detail {

struct Kinematics {
  Joints joints;
  std::array<Mat3, kNumJoints> global;  // rotation applied to the bones leaving each joint
  std::array<Mat3, kNumJoints> local;
};

inline Kinematics run_kinematics(const HandModel& model, const PoseState& state) {
  Kinematics k;
  const Eigen::Matrix<double, kNumBones, 1> bone_scale =
      Eigen::Matrix<double, kNumBones, 1>::Ones() + model.shape_basis().transpose() * state.beta;

  k.local[0] = axis_angle_to_matrix(state.root);
  k.global[0] = k.local[0];
  k.joints[0] = k.global[0] * model.rest_joints()[0];
  for (int i = 1; i < kNumJoints; ++i) {
    const int c = model.order()[i];
    const int p = model.parent(c);
    k.joints[c] = k.joints[p] + k.global[p] * (model.rest_bone(c) * bone_scale[c - 1]);
    const int slot = model.dof_slot(c);
    k.local[c] = slot >= 0 ? axis_angle_to_matrix(state.joint_theta(slot)) : Mat3::Identity();
    k.global[c] = k.global[p] * k.local[c];
  }
  return k;
}

}  // namespace detail

/// Joint positions for (beta, theta, root). The root rotation turns the whole hand
/// about the model origin; translation belongs to the alignment transform.
inline Joints forward_kinematics(const HandModel& model, const PoseState& state) {
  return detail::run_kinematics(model, state).joints;
}

/// Columns: theta (45) then root (3). Rows: joint-major x/y/z (63).
inline Eigen::MatrixXd fk_jacobian(const HandModel& model, const PoseState& state) {
  const auto k = detail::run_kinematics(model, state);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * kNumJoints, kNumPoseDof + kNumRootDof);

  for (int slot = 0; slot < kNumArticulated; ++slot) {
    const int j = kArticulated[slot];
    const Mat3 axes = k.global[j] * right_jacobian(state.joint_theta(slot));
    for (int c = 0; c < kNumJoints; ++c) {
      if (!model.is_descendant(c, j)) continue;
      const Vec3 arm = k.joints[c] - k.joints[j];
      for (int a = 0; a < 3; ++a) jac.block<3, 1>(3 * c, 3 * slot + a) = axes.col(a).cross(arm);
    }
  }
  const Mat3 root_axes = k.global[0] * right_jacobian(state.root);
  for (int c = 0; c < kNumJoints; ++c)
    for (int a = 0; a < 3; ++a) jac.block<3, 1>(3 * c, kNumPoseDof + a) = root_axes.col(a).cross(k.joints[c]);
  return jac;
}

/// d joints / d beta, 63 x 10.
inline Eigen::MatrixXd fk_shape_jacobian(const HandModel& model, const PoseState& state) {
  const auto k = detail::run_kinematics(model, state);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * kNumJoints, kNumShape);
  for (int i = 1; i < kNumJoints; ++i) {
    const int c = model.order()[i];
    const int p = model.parent(c);
    const Vec3 bone = k.global[p] * model.rest_bone(c);
    for (int m = 0; m < kNumShape; ++m)
      jac.block<3, 1>(3 * c, m) = jac.block<3, 1>(3 * p, m) + bone * model.shape_basis()(m, c - 1);
  }
  return jac;
}

}  // namespace handfit

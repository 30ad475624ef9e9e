#pragma once

#include <Eigen/Core>
#include <array>
#include <string>

#include "handfit/errors.hpp"
#include "handfit/hand_model.hpp"
#include "handfit/keypoints.hpp"
#include "handfit/losses.hpp"

namespace handfit {

enum class ResidualMode { per_coordinate, per_point };

/// Data-term configuration. rho and delta are in target units.
struct LossSpec {
  LossKind kind = LossKind::mse;
  double rho = 20.0;
  double delta = 20.0;
  double fingertip_weight = 5.0;
  double a_limits = 1e-2;
  ResidualMode residual_mode = ResidualMode::per_coordinate;

  void validate() const {
    if (kind == LossKind::geman_mcclure && !(rho > 0.0)) throw ParameterError("loss.rho must be positive");
    if (kind == LossKind::huber && !(delta > 0.0)) throw ParameterError("loss.delta must be positive");
    if (!(fingertip_weight >= 1.0)) throw ParameterError("loss.fingertip_weight must be >= 1");
    if (!(a_limits >= 0.0)) throw ParameterError("loss.a_limits must be >= 0");
  }
};

enum class Stage { one, two };

/// Linear map applied to model-space residuals before the loss: e -> scale * rotation * e.
/// With the alignment's scale and rotation this evaluates the loss in target axes and units.
struct ResidualFrame {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();

  Mat3 linear() const { return scale * rotation; }
};

/// Which parts of PoseState are free. theta is always free.
struct VariableLayout {
  bool root = false;
  bool shape = false;

  int dim() const { return kNumPoseDof + (root ? kNumRootDof : 0) + (shape ? kNumShape : 0); }
};

inline std::array<double, kNumJoints> keypoint_weights(const KeypointSet& target, double fingertip_weight) {
  std::array<double, kNumJoints> w{};
  for (int j = 0; j < kNumJoints; ++j) w[j] = target.valid[j] ? (is_fingertip(j) ? fingertip_weight : 1.0) : 0.0;
  return w;
}

namespace detail {

inline PenaltyTerm penalty(const LossSpec& spec, double r) {
  switch (spec.kind) {
    case LossKind::mse:
      return squared_penalty(r);
    case LossKind::geman_mcclure:
      return geman_mcclure_penalty(r, spec.rho);
    case LossKind::huber:
      return huber_penalty(r, spec.delta);
  }
  return {};
}

}  // namespace detail

/// Stage objective over a packed parameter vector [theta | root? | beta?].
///
/// Stage one: weighted loss over 3D residuals of the valid keypoints.
/// Stage two: the same loss over the x/y residual components plus the joint-limit barrier.
/// Fingertips {4, 8, 12, 16, 20} get `fingertip_weight`, other valid points 1, invalid 0.
/// The loss is a weighted mean over coordinates (per_coordinate) or over points
/// (per_point, robust kinds only; mse always averages coordinates).
class HandObjective {
 public:
  HandObjective(const HandModel& model, const KeypointSet& target, const LossSpec& spec, Stage stage,
                ResidualFrame frame = {}, VariableLayout layout = {}, PoseState base = {}, double shape_l2 = 0.0)
      : model_(model),
        target_(target),
        spec_(spec),
        stage_(stage),
        frame_(frame),
        layout_(layout),
        base_(base),
        shape_l2_(shape_l2),
        weights_(keypoint_weights(target, spec.fingertip_weight)) {
    spec_.validate();
    if (target.valid_count() == 0) throw EmptyError("objective has no valid keypoints");
    for (int j = 0; j < kNumJoints; ++j)
      if (target.valid[j] && !target.points[j].allFinite())
        throw ParameterError("target keypoint " + std::to_string(j) + " is not finite");
    double wsum = 0.0;
    for (double w : weights_) wsum += w;
    const int dims = stage == Stage::one ? 3 : 2;
    const bool per_point = spec_.residual_mode == ResidualMode::per_point && spec_.kind != LossKind::mse;
    normalizer_ = per_point ? wsum : wsum * dims;
  }

  int dim() const { return layout_.dim(); }
  Stage stage() const { return stage_; }
  const VariableLayout& layout() const { return layout_; }

  Eigen::VectorXd pack(const PoseState& s) const {
    Eigen::VectorXd x(dim());
    x.head<kNumPoseDof>() = s.theta;
    int at = kNumPoseDof;
    if (layout_.root) {
      x.segment<kNumRootDof>(at) = s.root;
      at += kNumRootDof;
    }
    if (layout_.shape) x.segment<kNumShape>(at) = s.beta;
    return x;
  }

  PoseState unpack(const Eigen::VectorXd& x) const {
    if (x.size() != dim())
      throw ParameterError("parameter vector has " + std::to_string(x.size()) + " entries, expected " +
                           std::to_string(dim()));
    PoseState s = base_;
    s.theta = x.head<kNumPoseDof>();
    int at = kNumPoseDof;
    if (layout_.root) {
      s.root = x.segment<kNumRootDof>(at);
      at += kNumRootDof;
    }
    if (layout_.shape) s.beta = x.segment<kNumShape>(at);
    return s;
  }

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd* grad = nullptr) const {
    return evaluate(unpack(x), grad);
  }

  /// Objective at `state`; when `grad` is given it receives d f / d x in the packed layout.
  double evaluate(const PoseState& state, Eigen::VectorXd* grad = nullptr) const {
    const Joints pred = forward_kinematics(model_, state);
    const Mat3 lin = frame_.linear();
    const bool planar = stage_ == Stage::two;
    const bool per_point = spec_.residual_mode == ResidualMode::per_point && spec_.kind != LossKind::mse;

    double data = 0.0;
    Eigen::Matrix<double, 3 * kNumJoints, 1> g_pos = Eigen::Matrix<double, 3 * kNumJoints, 1>::Zero();
    for (int j = 0; j < kNumJoints; ++j) {
      if (weights_[j] == 0.0) continue;
      Vec3 e = lin * (pred[j] - target_.points[j]);
      if (planar) e.z() = 0.0;
      Vec3 ge = Vec3::Zero();
      if (per_point) {
        const auto t = detail::penalty(spec_, e.norm());
        data += weights_[j] * t.value;
        ge = weights_[j] * t.grad_over_r * e;
      } else {
        const int dims = planar ? 2 : 3;
        for (int d = 0; d < dims; ++d) {
          const auto t = detail::penalty(spec_, e[d]);
          data += weights_[j] * t.value;
          ge[d] = weights_[j] * t.grad_over_r * e[d];
        }
      }
      g_pos.segment<3>(3 * j) = lin.transpose() * ge / normalizer_;
    }
    double f = data / normalizer_;

    Eigen::Matrix<double, kNumPoseDof, 1> g_lim = Eigen::Matrix<double, kNumPoseDof, 1>::Zero();
    if (planar) {
      f += e_limits(std::span<const double>(state.theta.data(), kNumPoseDof),
                    std::span<const JointLimit>(model_.joint_limits()), spec_.a_limits,
                    std::span<double>(g_lim.data(), kNumPoseDof));
    }
    if (layout_.shape) f += shape_l2_ * state.beta.squaredNorm();

    if (!std::isfinite(f)) throw NumericError("objective is not finite");

    if (grad) {
      grad->resize(dim());
      const Eigen::MatrixXd jac = fk_jacobian(model_, state);
      const Eigen::VectorXd g_all = jac.transpose() * g_pos;
      grad->head<kNumPoseDof>() = g_all.head<kNumPoseDof>() + g_lim;
      int at = kNumPoseDof;
      if (layout_.root) {
        grad->segment<kNumRootDof>(at) = g_all.segment<kNumRootDof>(kNumPoseDof);
        at += kNumRootDof;
      }
      if (layout_.shape) {
        const Eigen::MatrixXd jb = fk_shape_jacobian(model_, state);
        grad->segment<kNumShape>(at) = jb.transpose() * g_pos + 2.0 * shape_l2_ * state.beta;
      }
    }
    return f;
  }

 private:
  const HandModel& model_;
  KeypointSet target_;
  LossSpec spec_;
  Stage stage_;
  ResidualFrame frame_;
  VariableLayout layout_;
  PoseState base_;
  double shape_l2_;
  std::array<double, kNumJoints> weights_;
  double normalizer_ = 1.0;
};

inline double stage1_objective(const PoseState& state, const HandModel& model, const KeypointSet& target,
                               const LossSpec& spec) {
  return HandObjective(model, target, spec, Stage::one).evaluate(state);
}

inline double stage2_objective(const PoseState& state, const HandModel& model, const KeypointSet& target,
                               const LossSpec& spec) {
  return HandObjective(model, target, spec, Stage::two).evaluate(state);
}

}  // namespace handfit

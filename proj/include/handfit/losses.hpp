#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <string_view>

#include "handfit/errors.hpp"
#include "handfit/hand_model.hpp"

namespace handfit {

enum class LossKind { mse, geman_mcclure, huber };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::mse:
      return "mse";
    case LossKind::geman_mcclure:
      return "geman_mcclure";
    case LossKind::huber:
      return "huber";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "mse") return LossKind::mse;
  if (s == "geman_mcclure" || s == "gm") return LossKind::geman_mcclure;
  if (s == "huber") return LossKind::huber;
  throw ParameterError("unknown loss kind '" + std::string(s) + "'");
}

/// Value of a per-residual penalty and its derivative divided by the residual
/// magnitude, so that d penalty / d e = grad_over_r * e for a residual vector e.
struct PenaltyTerm {
  double value = 0.0;
  double grad_over_r = 0.0;
};

/// Squared error r^2.
inline PenaltyTerm squared_penalty(double r) { return {r * r, 2.0}; }

/// rho^2 r^2 / (r^2 + rho^2); saturates at rho^2.
inline PenaltyTerm geman_mcclure_penalty(double r, double rho) {
  const double r2 = r * r;
  const double rho2 = rho * rho;
  const double den = r2 + rho2;
  return {rho2 * (r2 / den), 2.0 * rho2 * rho2 / (den * den)};
}

/// r^2 / 2 inside |r| <= delta, delta (|r| - delta / 2) outside.
inline PenaltyTerm huber_penalty(double r, double delta) {
  const double a = std::abs(r);
  if (a <= delta) return {0.5 * a * a, 1.0};
  return {delta * (a - 0.5 * delta), delta / a};
}

/// Weighted mean of squared coordinate errors: sum_i w_i |p_i - t_i|^2 / (D sum_i w_i).
inline double loss_mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target, const Eigen::VectorXd& weights) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || weights.size() != pred.rows())
    throw ParameterError("loss_mse: shape mismatch");
  if ((weights.array() < 0.0).any()) throw ParameterError("loss_mse: negative weight");
  const double wsum = weights.sum();
  if (!(wsum > 0.0)) throw ParameterError("loss_mse: weights sum to zero");
  const Eigen::VectorXd sq = (pred - target).rowwise().squaredNorm();
  return weights.dot(sq) / (wsum * static_cast<double>(pred.cols()));
}

inline double loss_gm(std::span<const double> residuals, double rho) {
  if (!(rho > 0.0)) throw ParameterError("loss_gm: rho must be positive");
  if (residuals.empty()) throw EmptyError("loss_gm: no residuals");
  double s = 0.0;
  for (double r : residuals) s += geman_mcclure_penalty(r, rho).value;
  return s / static_cast<double>(residuals.size());
}

inline double loss_huber(std::span<const double> residuals, double delta) {
  if (!(delta > 0.0)) throw ParameterError("loss_huber: delta must be positive");
  if (residuals.empty()) throw EmptyError("loss_huber: no residuals");
  double s = 0.0;
  for (double r : residuals) s += huber_penalty(r, delta).value;
  return s / static_cast<double>(residuals.size());
}

/// Soft joint-limit barrier a * sum_i (exp(l_i - theta_i) + exp(theta_i - u_i)).
/// Writes a * (exp(theta_i - u_i) - exp(l_i - theta_i)) into `grad` when given.
inline double e_limits(std::span<const double> theta, std::span<const JointLimit> limits, double a_limits,
                       std::span<double> grad = {}) {
  if (theta.size() != limits.size()) throw ParameterError("e_limits: theta and limits differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double below = std::exp(limits[i].lower - theta[i]);
    const double above = std::exp(theta[i] - limits[i].upper);
    s += below + above;
    if (!grad.empty()) grad[i] = a_limits * (above - below);
  }
  return a_limits * s;
}

inline double e_limits(const PoseVector& theta, const std::array<JointLimit, kNumPoseDof>& limits, double a_limits) {
  return e_limits(std::span<const double>(theta.data(), kNumPoseDof), std::span<const JointLimit>(limits), a_limits);
}

}  // namespace handfit

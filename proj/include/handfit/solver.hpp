#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "handfit/errors.hpp"

namespace handfit {

enum class SolverMethod { bfgs, lbfgs };

inline std::string_view to_string(SolverMethod m) { return m == SolverMethod::bfgs ? "bfgs" : "lbfgs"; }

inline SolverMethod parse_solver_method(std::string_view s) {
  if (s == "bfgs") return SolverMethod::bfgs;
  if (s == "lbfgs" || s == "l-bfgs") return SolverMethod::lbfgs;
  throw ParameterError("unknown solver method '" + std::string(s) + "'");
}

struct SolverConfig {
  SolverMethod method = SolverMethod::lbfgs;
  int memory = 10;
  int max_iters = 200;
  double grad_tol = 1e-6;  // infinity norm
  double f_tol = 1e-10;    // relative decrease, three iterations in a row
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_line_search_steps = 40;

  void validate() const {
    if (memory < 1) throw ParameterError("solver.memory must be >= 1");
    if (max_iters < 1) throw ParameterError("solver.max_iters must be >= 1");
    if (!(grad_tol > 0.0)) throw ParameterError("solver.grad_tol must be positive");
    if (!(f_tol >= 0.0)) throw ParameterError("solver.f_tol must be >= 0");
    if (!(0.0 < c1 && c1 < c2 && c2 < 1.0)) throw ParameterError("solver requires 0 < c1 < c2 < 1");
    if (max_line_search_steps < 1) throw ParameterError("solver.max_line_search_steps must be >= 1");
  }
};

enum class SolveStatus { converged_grad, converged_f, max_iters, line_search_failure };

inline std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged_grad:
      return "converged_grad";
    case SolveStatus::converged_f:
      return "converged_f";
    case SolveStatus::max_iters:
      return "max_iters";
    case SolveStatus::line_search_failure:
      return "line_search_failure";
  }
  return "?";
}

struct SolveOutcome {
  Eigen::VectorXd x_final;
  double f_initial = 0.0;
  double f_final = 0.0;
  double grad_norm = 0.0;  // infinity norm at x_final
  int iterations = 0;
  int evaluations = 0;
  SolveStatus status = SolveStatus::max_iters;
};

/// One accepted step x -> x + alpha * p, reported to the optional observer.
struct StepRecord {
  int iteration = 0;
  double alpha = 0.0;
  double f_before = 0.0;
  double f_after = 0.0;
  double slope_before = 0.0;  // grad(x)^T p
  double slope_after = 0.0;   // grad(x + alpha p)^T p
};

using StepObserver = std::function<void(const StepRecord&)>;

enum class GradientMode { analytic, central_diff };

/// Central differences with step h_i = step * max(1, |x_i|).
template <class Fn>
Eigen::VectorXd numeric_gradient(const Fn& f, const Eigen::VectorXd& x, double step = 1e-6) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = step * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("objective not finite around coordinate " + std::to_string(i));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Gradient of an objective callable as `double f(const VectorXd& x, VectorXd* grad)`.
template <class Objective>
Eigen::VectorXd gradient(const Objective& f, const Eigen::VectorXd& x, GradientMode mode, double step = 1e-6) {
  if (mode == GradientMode::central_diff)
    return numeric_gradient([&](const Eigen::VectorXd& y) { return f(y, nullptr); }, x, step);
  Eigen::VectorXd g;
  const double v = f(x, &g);
  if (!std::isfinite(v) || !g.allFinite()) throw NumericError("analytic gradient is not finite");
  return g;
}

namespace detail {

struct LinePoint {
  double alpha = 0.0;
  double f = 0.0;
  double slope = 0.0;
};

// Minimizer of the cubic through (a, fa, da) and (b, fb, db); NaN when it does not exist.
inline double cubic_minimizer(const LinePoint& a, const LinePoint& b) {
  const double d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
  const double disc = d1 * d1 - a.slope * b.slope;
  if (!(disc >= 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double d2 = (b.alpha > a.alpha ? 1.0 : -1.0) * std::sqrt(disc);
  const double den = b.slope - a.slope + 2.0 * d2;
  if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / den;
}

template <class Objective>
class WolfeSearch {
 public:
  WolfeSearch(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& p, double f0, double slope0,
              const SolverConfig& cfg)
      : f_(f), x_(x), p_(p), f0_(f0), slope0_(slope0), cfg_(cfg) {}

  /// Strong-Wolfe step by bracketing then zooming with cubic interpolation.
  bool run(double alpha0) {
    LinePoint prev{0.0, f0_, slope0_};
    double alpha = alpha0;
    for (int i = 0; i < cfg_.max_line_search_steps; ++i) {
      const LinePoint cur = probe(alpha);
      if (cur.f > f0_ + cfg_.c1 * cur.alpha * slope0_ || (i > 0 && cur.f >= prev.f)) return zoom(prev, cur);
      if (std::abs(cur.slope) <= -cfg_.c2 * slope0_) return accept(cur);
      if (cur.slope >= 0.0) return zoom(cur, prev);
      prev = cur;
      alpha *= 2.0;
    }
    return false;
  }

  double alpha() const { return best_.alpha; }
  double f() const { return best_.f; }
  double slope() const { return best_.slope; }
  const Eigen::VectorXd& x() const { return best_x_; }
  const Eigen::VectorXd& grad() const { return best_g_; }
  int evaluations() const { return evals_; }

 private:
  LinePoint probe(double alpha) {
    ++evals_;
    trial_x_ = x_ + alpha * p_;
    const double v = f_(trial_x_, &trial_g_);
    if (!std::isfinite(v) || !trial_g_.allFinite())
      throw NumericError("objective not finite during line search at step " + std::to_string(alpha));
    return {alpha, v, trial_g_.dot(p_)};
  }

  bool accept(const LinePoint& pt) {
    best_ = pt;
    best_x_ = trial_x_;
    best_g_ = trial_g_;
    return true;
  }

  bool zoom(LinePoint lo, LinePoint hi) {
    for (int j = 0; j < cfg_.max_line_search_steps; ++j) {
      const double width = hi.alpha - lo.alpha;
      if (std::abs(width) <= 1e-16 * std::max(std::abs(lo.alpha), std::abs(hi.alpha))) return false;
      double a = cubic_minimizer(lo, hi);
      const double left = std::min(lo.alpha, hi.alpha) + 0.1 * std::abs(width);
      const double right = std::max(lo.alpha, hi.alpha) - 0.1 * std::abs(width);
      if (!std::isfinite(a) || a < left || a > right) a = 0.5 * (lo.alpha + hi.alpha);

      const LinePoint cur = probe(a);
      if (cur.f > f0_ + cfg_.c1 * cur.alpha * slope0_ || cur.f >= lo.f) {
        hi = cur;
      } else {
        if (std::abs(cur.slope) <= -cfg_.c2 * slope0_) return accept(cur);
        if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = cur;
      }
    }
    return false;
  }

  const Objective& f_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& p_;
  double f0_;
  double slope0_;
  const SolverConfig& cfg_;
  LinePoint best_;
  Eigen::VectorXd best_x_, best_g_, trial_x_, trial_g_;
  int evals_ = 0;
};

}  // namespace detail

/// Quasi-Newton minimization (BFGS or L-BFGS) with a strong-Wolfe line search.
///
/// `f(x, grad)` returns the objective and, when `grad` is non-null, writes the gradient.
/// BFGS starts from the identity inverse Hessian; L-BFGS scales its initial matrix by
/// s^T y / y^T y of the newest pair. Curvature pairs with s^T y <= 0 are skipped.
/// Stops when |grad|_inf <= grad_tol, when the relative decrease stays <= f_tol for three
/// iterations, at max_iters, or when the line search fails (x is left at the last accepted point).
template <class Objective>
SolveOutcome minimize(const Objective& f, const Eigen::VectorXd& x0, const SolverConfig& cfg,
                      const StepObserver& observer = {}) {
  cfg.validate();
  const Eigen::Index n = x0.size();

  SolveOutcome out;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd g;
  double fx = f(x, &g);
  out.evaluations = 1;
  if (!std::isfinite(fx) || !g.allFinite()) throw NumericError("objective not finite at the starting point");
  out.f_initial = fx;

  Eigen::MatrixXd h;  // BFGS inverse Hessian
  if (cfg.method == SolverMethod::bfgs) h = Eigen::MatrixXd::Identity(n, n);
  struct Pair {
    Eigen::VectorXd s, y;
    double rho;
  };
  std::deque<Pair> history;

  auto finish = [&](SolveStatus status) {
    out.x_final = x;
    out.f_final = fx;
    out.grad_norm = g.size() ? g.lpNorm<Eigen::Infinity>() : 0.0;
    out.status = status;
    return out;
  };

  if (g.size() == 0 || g.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) return finish(SolveStatus::converged_grad);

  int small_decrease = 0;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    Eigen::VectorXd p;
    if (cfg.method == SolverMethod::bfgs) {
      p = -(h * g);
    } else {
      Eigen::VectorXd q = g;
      std::vector<double> a(history.size());
      for (std::size_t i = history.size(); i-- > 0;) {
        a[i] = history[i].rho * history[i].s.dot(q);
        q -= a[i] * history[i].y;
      }
      if (!history.empty()) q *= history.back().s.dot(history.back().y) / history.back().y.squaredNorm();
      for (std::size_t i = 0; i < history.size(); ++i) {
        const double b = history[i].rho * history[i].y.dot(q);
        q += (a[i] - b) * history[i].s;
      }
      p = -q;
    }

    double slope = g.dot(p);
    if (!(slope < 0.0)) {
      // Not a descent direction: restart from steepest descent.
      if (cfg.method == SolverMethod::bfgs) h.setIdentity();
      history.clear();
      p = -g;
      slope = -g.squaredNorm();
    }

    const double alpha0 = iter == 0 ? std::min(1.0, 1.0 / g.norm()) : 1.0;
    detail::WolfeSearch<Objective> search(f, x, p, fx, slope, cfg);
    const bool ok = search.run(alpha0);
    out.evaluations += search.evaluations();
    if (!ok) {
      out.iterations = iter;
      return finish(SolveStatus::line_search_failure);
    }

    if (observer) observer({iter, search.alpha(), fx, search.f(), slope, search.slope()});

    const Eigen::VectorXd s = search.x() - x;
    const Eigen::VectorXd y = search.grad() - g;
    const double sy = s.dot(y);
    if (sy > std::numeric_limits<double>::epsilon() * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      if (cfg.method == SolverMethod::bfgs) {
        const Eigen::VectorXd hy = h * y;
        const double yhy = y.dot(hy);
        h += (rho * rho * yhy + rho) * (s * s.transpose()) - rho * (hy * s.transpose() + s * hy.transpose());
      } else {
        history.push_back({s, y, rho});
        if (static_cast<int>(history.size()) > cfg.memory) history.pop_front();
      }
    }

    const double f_prev = fx;
    x = search.x();
    g = search.grad();
    fx = search.f();
    out.iterations = iter + 1;

    if (g.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) return finish(SolveStatus::converged_grad);

    const double denom = std::max({std::abs(f_prev), std::abs(fx), std::numeric_limits<double>::min()});
    small_decrease = (f_prev - fx) / denom <= cfg.f_tol ? small_decrease + 1 : 0;
    if (small_decrease >= 3) return finish(SolveStatus::converged_f);
  }
  return finish(SolveStatus::max_iters);
}

/// Overload for separate value and gradient callables: `double f(x)`, `VectorXd grad(x)`.
template <class Value, class Grad>
  requires std::is_invocable_r_v<Eigen::VectorXd, Grad, const Eigen::VectorXd&>
SolveOutcome minimize(const Value& value, const Grad& grad, const Eigen::VectorXd& x0, const SolverConfig& cfg,
                      const StepObserver& observer = {}) {
  auto combined = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = grad(x);
    return value(x);
  };
  return minimize(combined, x0, cfg, observer);
}

}  // namespace handfit

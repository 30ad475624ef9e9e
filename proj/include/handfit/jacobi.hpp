#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace handfit {

template <int N>
struct SymmetricEigen {
  Eigen::Matrix<double, N, 1> values;   // descending
  Eigen::Matrix<double, N, N> vectors;  // column k pairs with values[k]
  int sweeps = 0;
};

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix. Stops when the
/// off-diagonal mass drops below `tol` times the Frobenius norm or after `max_sweeps`.
template <int N>
SymmetricEigen<N> jacobi_eigen(Eigen::Matrix<double, N, N> a, double tol = 1e-12, int max_sweeps = 50) {
  using Mat = Eigen::Matrix<double, N, N>;
  Mat v = Mat::Identity();
  const double scale = a.norm();
  int sweep = 0;

  auto off_diagonal = [&] {
    double s = 0.0;
    for (int p = 0; p < N; ++p)
      for (int q = p + 1; q < N; ++q) s += a(p, q) * a(p, q);
    return std::sqrt(2.0 * s);
  };

  if (scale > 0.0) {
    for (; sweep < max_sweeps; ++sweep) {
      if (off_diagonal() <= tol * scale) break;
      for (int p = 0; p < N; ++p) {
        for (int q = p + 1; q < N; ++q) {
          const double apq = a(p, q);
          if (apq == 0.0) continue;
          const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
          const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
          const double c = 1.0 / std::sqrt(t * t + 1.0);
          const double s = t * c;
          for (int k = 0; k < N; ++k) {
            const double akp = a(k, p), akq = a(k, q);
            a(k, p) = c * akp - s * akq;
            a(k, q) = s * akp + c * akq;
          }
          for (int k = 0; k < N; ++k) {
            const double apk = a(p, k), aqk = a(q, k);
            a(p, k) = c * apk - s * aqk;
            a(q, k) = s * apk + c * aqk;
          }
          for (int k = 0; k < N; ++k) {
            const double vkp = v(k, p), vkq = v(k, q);
            v(k, p) = c * vkp - s * vkq;
            v(k, q) = s * vkp + c * vkq;
          }
        }
      }
    }
  }

  std::array<int, N> idx;
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int i, int j) { return a(i, i) > a(j, j); });

  SymmetricEigen<N> out;
  out.sweeps = sweep;
  for (int k = 0; k < N; ++k) {
    out.values[k] = a(idx[k], idx[k]);
    out.vectors.col(k) = v.col(idx[k]);
  }
  return out;
}

}  // namespace handfit

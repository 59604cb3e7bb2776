// Least squares with explicit pair and year dummy columns.
#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace oracle {

struct DummyFit {
  Eigen::VectorXd beta, se, residuals, coefficients;
  double sigma2 = 0.0;
  Eigen::Index dof = 0;
};

/// Rows ordered t * pairs + p. Columns: X, one dummy per pair, year dummies
/// for years 1..T-1. Conventional standard errors.
inline DummyFit dummy_ls(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, Eigen::Index pairs, Eigen::Index T) {
  const Eigen::Index N = y.size(), k = X.cols();
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(N, k + pairs + T - 1);
  Z.leftCols(k) = X;
  for (Eigen::Index r = 0; r < N; ++r) {
    Z(r, k + r % pairs) = 1.0;
    const Eigen::Index t = r / pairs;
    if (t > 0) Z(r, k + pairs + t - 1) = 1.0;
  }
  DummyFit f;
  f.coefficients = Z.colPivHouseholderQr().solve(y);
  f.residuals = y - Z * f.coefficients;
  f.dof = N - Z.cols();
  f.sigma2 = f.residuals.squaredNorm() / static_cast<double>(f.dof);
  const Eigen::MatrixXd cov = f.sigma2 * (Z.transpose() * Z).inverse();
  f.beta = f.coefficients.head(k);
  f.se = cov.diagonal().head(k).array().sqrt();
  return f;
}

}  // namespace oracle

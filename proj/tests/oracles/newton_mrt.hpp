// Newton solver for the multilateral resistance system on the log power scale,
// written independently of the library's damped fixed point.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

struct Resistances {
  Eigen::VectorXd Pi, P;
  double residual = 0.0;
};

/// Solves a_i = log sum_j A_ij exp(-b_j), b_j = log sum_i B_ij exp(-a_i) with
/// b_anchor = 0, where u = exp(a) = Pi^(1-sigma), v = exp(b) = P^(1-sigma).
inline Resistances newton_kernels(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double sigma,
                                  int anchor = 0) {
  const Eigen::Index n = A.rows();
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n), b = Eigen::VectorXd::Zero(n);
  auto residual = [&](const Eigen::VectorXd& aa, const Eigen::VectorXd& bb) {
    Eigen::VectorXd F(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) s += A(i, j) * std::exp(-bb[j]);
      F[i] = aa[i] - std::log(s);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += B(i, j) * std::exp(-aa[i]);
      F[n + j] = bb[j] - std::log(s);
    }
    return F;
  };
  // Unknowns: a (n) and b without the anchor (n - 1); equations: all but G_anchor.
  auto pack_eq = [&](const Eigen::VectorXd& F) {
    Eigen::VectorXd out(2 * n - 1);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < 2 * n; ++r)
      if (r != n + anchor) out[k++] = F[r];
    return out;
  };
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd F = pack_eq(residual(a, b));
    if (F.cwiseAbs().maxCoeff() < 1e-15) break;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) s += A(i, j) * std::exp(-b[j]);
      J(i, i) = 1.0;
      for (Eigen::Index j = 0; j < n; ++j) J(i, n + j) = A(i, j) * std::exp(-b[j]) / s;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += B(i, j) * std::exp(-a[i]);
      J(n + j, n + j) = 1.0;
      for (Eigen::Index i = 0; i < n; ++i) J(n + j, i) = B(i, j) * std::exp(-a[i]) / s;
    }
    Eigen::MatrixXd Jr(2 * n - 1, 2 * n - 1);
    Eigen::Index r2 = 0;
    for (Eigen::Index r = 0; r < 2 * n; ++r) {
      if (r == n + anchor) continue;
      Eigen::Index c2 = 0;
      for (Eigen::Index c = 0; c < 2 * n; ++c) {
        if (c == n + anchor) continue;
        Jr(r2, c2++) = J(r, c);
      }
      ++r2;
    }
    const Eigen::VectorXd step = Jr.fullPivLu().solve(-F);
    // Backtracking on the sup-norm of the residual.
    double t = 1.0;
    const double f0 = F.cwiseAbs().maxCoeff();
    for (int ls = 0; ls < 40; ++ls) {
      Eigen::VectorXd a2 = a, b2 = b;
      Eigen::Index k = 0;
      for (Eigen::Index i = 0; i < n; ++i) a2[i] += t * step[k++];
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != anchor) b2[j] += t * step[k++];
      if (pack_eq(residual(a2, b2)).cwiseAbs().maxCoeff() < f0 || ls == 39) {
        a = a2;
        b = b2;
        break;
      }
      t *= 0.5;
    }
  }
  Resistances r;
  r.Pi = (a / (1.0 - sigma)).array().exp();
  r.P = (b / (1.0 - sigma)).array().exp();
  r.residual = residual(a, b).cwiseAbs().maxCoeff();
  return r;
}

/// One cross-section: A_ij = T_ij^(1-s) E_j / Y, B_ij = T_ij^(1-s) X_i / Y.
inline Resistances newton_mrt(const Eigen::MatrixXd& T, const Eigen::VectorXd& E, const Eigen::VectorXd& X,
                              double sigma, int anchor = 0) {
  const double Y = X.sum();
  const Eigen::MatrixXd K = T.array().pow(1.0 - sigma);
  Eigen::MatrixXd A = K, B = K;
  for (Eigen::Index i = 0; i < K.rows(); ++i)
    for (Eigen::Index j = 0; j < K.cols(); ++j) {
      A(i, j) *= E[j] / Y;
      B(i, j) *= X[i] / Y;
    }
  return newton_kernels(A, B, sigma, anchor);
}

/// Year-pooled system: sums over destinations (origins) also run over years,
/// sizes relative to the grand total.
inline Resistances newton_mrt_pooled(const std::vector<Eigen::MatrixXd>& T, const std::vector<Eigen::VectorXd>& E,
                                     const std::vector<Eigen::VectorXd>& X, double sigma, int anchor = 0) {
  double grand = 0.0;
  for (const auto& x : X) grand += x.sum();
  const Eigen::Index n = T.front().rows();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n), B = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t t = 0; t < T.size(); ++t)
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const double k = std::pow(T[t](i, j), 1.0 - sigma);
        A(i, j) += k * E[t][j] / grand;
        B(i, j) += k * X[t][i] / grand;
      }
  return newton_kernels(A, B, sigma, anchor);
}

}  // namespace oracle

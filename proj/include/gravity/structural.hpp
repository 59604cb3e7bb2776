// structural.hpp
// Structural gravity system with CES demand: predicted flows
//   Y_ij = E_j X_i / X * (T_ij / (P_j Pi_i))^(1-sigma)
// and the multilateral resistance fixed point
//   Pi_i^(1-sigma) = sum_j (T_ij / P_j)^(1-sigma) E_j / X
//   P_j^(1-sigma)  = sum_i (T_ij / Pi_i)^(1-sigma) X_i / X.
// The system is solved on the power scale u = Pi^(1-sigma), v = P^(1-sigma),
// where it reads u = A (1/v), v = B' (1/u).
#pragma once

#include <algorithm>
#include <limits>
#include <cmath>
#include <cstddef>
#include <tuple>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gravity/error.hpp"
#include "gravity/util.hpp"

namespace gravity {

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// One cross-section of the structural model.
template <typename Scalar>
struct StructuralWorldT {
  Scalar sigma{4};
  /// Trade-cost factors T_ij >= 1.
  MatrixT<Scalar> trade_cost;
  /// Destination expenditures E_j.
  VectorT<Scalar> expenditure;
  /// Origin outputs X_i.
  VectorT<Scalar> output;
  Scalar world_output{0};

  StructuralWorldT() = default;
  StructuralWorldT(Scalar sigma_, MatrixT<Scalar> T, VectorT<Scalar> E, VectorT<Scalar> X)
      : sigma(sigma_), trade_cost(std::move(T)), expenditure(std::move(E)), output(std::move(X)) {
    world_output = output.sum();
    validate();
  }
  StructuralWorldT(Scalar sigma_, MatrixT<Scalar> T, VectorT<Scalar> E, VectorT<Scalar> X, Scalar total)
      : sigma(sigma_), trade_cost(std::move(T)), expenditure(std::move(E)), output(std::move(X)),
        world_output(total) {
    validate();
  }

  std::size_t countries() const noexcept { return static_cast<std::size_t>(output.size()); }

  /// Throws InvalidWorld.
  void validate() const {
    using std::abs;
    const Eigen::Index n = output.size();
    if (n < 2) throw Error(ErrorCode::InvalidWorld, "need at least two countries");
    if (!(sigma > Scalar(1))) throw Error(ErrorCode::InvalidWorld, "sigma must exceed 1");
    if (expenditure.size() != n || trade_cost.rows() != n || trade_cost.cols() != n)
      throw Error(ErrorCode::InvalidWorld, "dimension mismatch");
    for (Eigen::Index k = 0; k < n; ++k)
      if (!(output[k] > Scalar(0)) || !(expenditure[k] > Scalar(0)))
        throw Error(ErrorCode::InvalidWorld, "sizes must be positive");
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (!(trade_cost(i, j) >= Scalar(1)) || !std::isfinite(static_cast<double>(trade_cost(i, j))))
          throw Error(ErrorCode::InvalidWorld, "trade costs must be finite and >= 1");
    const Scalar scale = std::max(abs(world_output), Scalar(1e-300));
    if (abs(output.sum() - world_output) > Scalar(1e-9) * scale ||
        abs(expenditure.sum() - world_output) > Scalar(1e-9) * scale)
      throw Error(ErrorCode::InvalidWorld, "sum E = sum X = X_total violated");
  }
};

enum class MrtNormalization {
  /// P[anchor] = 1.
  Anchor,
  /// mean log Pi = mean log P (symmetric split of the free scale).
  Balanced,
};

template <typename Scalar>
struct MrtOptionsT {
  Scalar tol{1e-12};
  int max_iter = 500000;
  /// Geometric damping on the inward update, in (0, 1].
  Scalar damping{0.5};
  std::size_t anchor = 0;
  MrtNormalization normalization = MrtNormalization::Anchor;
};

template <typename Scalar>
struct MrtSolutionT {
  VectorT<Scalar> Pi;
  VectorT<Scalar> P;
  MrtNormalization normalization = MrtNormalization::Anchor;
  std::size_t anchor = 0;
  Scalar anchor_value{1};
  int iterations = 0;
  /// Sup-norm of |lhs - rhs| over both equations on the power scale.
  Scalar residual{0};
  /// Same, relative to the left-hand side.
  Scalar relative_residual{0};
  Scalar tolerance{0};
};

/// Residuals of u = A (1/v), v = B' (1/u): {absolute, relative} sup-norms.
template <typename Scalar>
std::pair<Scalar, Scalar> resistance_residual(const MatrixT<Scalar>& A, const MatrixT<Scalar>& B,
                                              const VectorT<Scalar>& u, const VectorT<Scalar>& v) {
  using std::abs;
  const VectorT<Scalar> ru = A * v.cwiseInverse();
  const VectorT<Scalar> rv = B.transpose() * u.cwiseInverse();
  Scalar absolute{0}, relative{0};
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    absolute = std::max({absolute, abs(u[k] - ru[k]), abs(v[k] - rv[k])});
    relative = std::max({relative, abs(Scalar(1) - ru[k] / u[k]), abs(Scalar(1) - rv[k] / v[k])});
  }
  return {absolute, relative};
}

/// Damped fixed point for u = A (1/v), v = B' (1/u) with positive A, B.
/// Returns power-scale (u, v) normalized per options. Throws NonConvergence.
template <typename Scalar>
MrtSolutionT<Scalar> solve_resistance_system(const MatrixT<Scalar>& A_in, const MatrixT<Scalar>& B_in,
                                             Scalar sigma, const MrtOptionsT<Scalar>& opt) {
  using std::log;
  using std::pow;
  const Eigen::Index n = A_in.rows();
  if (!(opt.tol > Scalar(0))) throw Error(ErrorCode::InvalidConfig, "tolerance must be positive");
  if (!(opt.damping > Scalar(0)) || opt.damping > Scalar(1))
    throw Error(ErrorCode::InvalidConfig, "damping must lie in (0, 1]");
  if (opt.anchor >= static_cast<std::size_t>(n)) throw Error(ErrorCode::InvalidConfig, "anchor out of range");
  // Scaling A and B by 1/k maps a solution (u, v) to (u/k, v).
  const Scalar k = std::max(A_in.maxCoeff(), B_in.maxCoeff());
  if (!(k > Scalar(0)) || !std::isfinite(static_cast<double>(k)))
    throw Error(ErrorCode::InvalidWorld, "degenerate trade-cost kernel");
  const MatrixT<Scalar> A = A_in / k;
  const MatrixT<Scalar> B = B_in / k;
  const auto a = static_cast<Eigen::Index>(opt.anchor);

  VectorT<Scalar> v = VectorT<Scalar>::Ones(n);
  VectorT<Scalar> u = A * v.cwiseInverse();
  Scalar abs_res{0}, rel_res{0};
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    std::tie(abs_res, rel_res) = resistance_residual<Scalar>(A, B, u, v);
    if (std::max(abs_res * k, rel_res) <= opt.tol) break;
    const VectorT<Scalar> target = B.transpose() * u.cwiseInverse();
    if (opt.damping == Scalar(1)) {
      v = target;
    } else {
      for (Eigen::Index j = 0; j < n; ++j)
        v[j] = pow(v[j], Scalar(1) - opt.damping) * pow(target[j], opt.damping);
    }
    v /= v[a];
    u = A * v.cwiseInverse();
    if (!u.allFinite() || !v.allFinite())
      throw Error(ErrorCode::NonConvergence, "non-finite iterate at iteration " + std::to_string(it));
  }
  if (std::max(abs_res * k, rel_res) > opt.tol)
    throw Error(ErrorCode::NonConvergence, "max_iter " + std::to_string(opt.max_iter) + " reached, residual " +
                                               std::to_string(static_cast<double>(std::max(abs_res * k, rel_res))));
  u *= k;

  if (opt.normalization == MrtNormalization::Balanced) {
    // u_i v_j is invariant under (c u, v / c); pick c so mean log u = mean log v
    Scalar mu{0}, mv{0};
    for (Eigen::Index j = 0; j < n; ++j) {
      mu += log(u[j]);
      mv += log(v[j]);
    }
    const Scalar log_c = (mv - mu) / (Scalar(2) * Scalar(n));
    using std::exp;
    u *= exp(log_c);
    v /= exp(log_c);
  }

  MrtSolutionT<Scalar> sol;
  const Scalar power = Scalar(1) / (Scalar(1) - sigma);
  sol.Pi.resize(n);
  sol.P.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    sol.Pi[j] = pow(u[j], power);
    sol.P[j] = pow(v[j], power);
  }
  sol.normalization = opt.normalization;
  sol.anchor = opt.anchor;
  sol.anchor_value = sol.P[a];
  sol.iterations = it;
  sol.residual = abs_res * k;
  sol.relative_residual = rel_res;
  sol.tolerance = opt.tol;
  return sol;
}

/// Power-scale kernels of one cross-section: A_ij = T^(1-s) E_j/X, B_ij = T^(1-s) X_i/X.
template <typename Scalar>
std::pair<MatrixT<Scalar>, MatrixT<Scalar>> resistance_kernels(const StructuralWorldT<Scalar>& w) {
  using std::pow;
  const Eigen::Index n = w.output.size();
  MatrixT<Scalar> A(n, n), B(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const Scalar kij = pow(w.trade_cost(i, j), Scalar(1) - w.sigma);
      A(i, j) = kij * w.expenditure[j] / w.world_output;
      B(i, j) = kij * w.output[i] / w.world_output;
    }
  return {A, B};
}

/// Solves the multilateral resistance system of one world.
/// Throws InvalidWorld, NonConvergence.
template <typename Scalar>
MrtSolutionT<Scalar> solve_mrt(const StructuralWorldT<Scalar>& world, const MrtOptionsT<Scalar>& opt = {}) {
  world.validate();
  const auto [A, B] = resistance_kernels(world);
  return solve_resistance_system<Scalar>(A, B, world.sigma, opt);
}

/// Residual of a solution under a world's own system: {absolute, relative}.
template <typename Scalar>
std::pair<Scalar, Scalar> mrt_residual(const StructuralWorldT<Scalar>& world, const MrtSolutionT<Scalar>& mrt) {
  using std::pow;
  const auto [A, B] = resistance_kernels(world);
  VectorT<Scalar> u(mrt.Pi.size()), v(mrt.P.size());
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    u[k] = pow(mrt.Pi[k], Scalar(1) - world.sigma);
    v[k] = pow(mrt.P[k], Scalar(1) - world.sigma);
  }
  return resistance_residual<Scalar>(A, B, u, v);
}

/// Predicted flows without checking that `mrt` solves this world's system.
template <typename Scalar>
MatrixT<Scalar> gravity_flows(const StructuralWorldT<Scalar>& world, const VectorT<Scalar>& Pi,
                              const VectorT<Scalar>& P) {
  using std::pow;
  const Eigen::Index n = world.output.size();
  MatrixT<Scalar> Y(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      Y(i, j) = world.expenditure[j] * world.output[i] / world.world_output *
                pow(world.trade_cost(i, j) / (P[j] * Pi[i]), Scalar(1) - world.sigma);
  return Y;
}

/// Predicted bilateral flows. Throws StaleSolution when `mrt` does not solve
/// this world's system to its recorded tolerance.
template <typename Scalar>
MatrixT<Scalar> predict_flows(const StructuralWorldT<Scalar>& world, const MrtSolutionT<Scalar>& mrt) {
  if (mrt.Pi.size() != world.output.size() || mrt.P.size() != world.output.size())
    throw Error(ErrorCode::StaleSolution, "solution dimension does not match world");
  const auto [absolute, relative] = mrt_residual(world, mrt);
  // Slack for rounding in the power-scale round trip.
  const Scalar allowed = Scalar(100) * (mrt.tolerance + std::numeric_limits<Scalar>::epsilon());
  if (!(std::max(absolute, relative) <= allowed))
    throw Error(ErrorCode::StaleSolution,
                "residual " + std::to_string(static_cast<double>(std::max(absolute, relative))) +
                    " exceeds tolerance " + std::to_string(static_cast<double>(mrt.tolerance)));
  return gravity_flows(world, mrt.Pi, mrt.P);
}

/// (beta_i p_i)^(1-sigma) = (X_i / X) Pi_i^(sigma-1), recovered on demand.
template <typename Scalar>
VectorT<Scalar> size_price_term(const StructuralWorldT<Scalar>& world, const MrtSolutionT<Scalar>& mrt) {
  using std::pow;
  VectorT<Scalar> out(world.output.size());
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out[i] = world.output[i] / world.world_output * pow(mrt.Pi[i], world.sigma - Scalar(1));
  return out;
}

enum class PanelMrtMode {
  /// Each year solves its own system.
  PerYear,
  /// One system whose resistance sums also run over years.
  Pooled,
};

/// Kernels of the year-pooled system, all sizes relative to the grand total.
template <typename Scalar>
std::pair<MatrixT<Scalar>, MatrixT<Scalar>> pooled_kernels(const std::vector<StructuralWorldT<Scalar>>& worlds) {
  using std::pow;
  const Eigen::Index n = worlds.front().output.size();
  Scalar grand{0};
  for (const auto& w : worlds) grand += w.world_output;
  MatrixT<Scalar> A = MatrixT<Scalar>::Zero(n, n), B = MatrixT<Scalar>::Zero(n, n);
  for (const auto& w : worlds)
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        const Scalar kij = pow(w.trade_cost(i, j), Scalar(1) - w.sigma);
        A(i, j) += kij * w.expenditure[j] / grand;
        B(i, j) += kij * w.output[i] / grand;
      }
  return {A, B};
}

/// Per-year or pooled solution for a panel of worlds over one country index.
/// Pooled mode returns the common solution once per year.
/// Throws NonConvergence (message names the year position), InvalidWorld.
template <typename Scalar>
std::vector<MrtSolutionT<Scalar>> solve_mrt_panel(const std::vector<StructuralWorldT<Scalar>>& worlds,
                                                  const MrtOptionsT<Scalar>& opt = {},
                                                  PanelMrtMode mode = PanelMrtMode::PerYear, unsigned threads = 1) {
  if (worlds.empty()) throw Error(ErrorCode::InvalidWorld, "empty panel");
  const Eigen::Index n = worlds.front().output.size();
  for (const auto& w : worlds) {
    w.validate();
    if (w.output.size() != n) throw Error(ErrorCode::InvalidWorld, "worlds differ in country count");
    if (w.sigma != worlds.front().sigma) throw Error(ErrorCode::InvalidWorld, "worlds differ in sigma");
  }
  std::vector<MrtSolutionT<Scalar>> out(worlds.size());
  if (mode == PanelMrtMode::Pooled) {
    const auto [A, B] = pooled_kernels(worlds);
    const auto sol = solve_resistance_system<Scalar>(A, B, worlds.front().sigma, opt);
    std::fill(out.begin(), out.end(), sol);
    return out;
  }
  parallel_for(worlds.size(), threads, [&](std::size_t t) {
    try {
      out[t] = solve_mrt(worlds[t], opt);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NonConvergence)
        throw Error(ErrorCode::NonConvergence, "year " + std::to_string(t) + ": " + e.what());
      throw;
    }
  });
  return out;
}

/// Residual of pooled solutions against the pooled system: {absolute, relative}.
template <typename Scalar>
std::pair<Scalar, Scalar> pooled_residual(const std::vector<StructuralWorldT<Scalar>>& worlds,
                                          const MrtSolutionT<Scalar>& mrt) {
  using std::pow;
  const auto [A, B] = pooled_kernels(worlds);
  const Scalar s = worlds.front().sigma;
  VectorT<Scalar> u(mrt.Pi.size()), v(mrt.P.size());
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    u[k] = pow(mrt.Pi[k], Scalar(1) - s);
    v[k] = pow(mrt.P[k], Scalar(1) - s);
  }
  return resistance_residual<Scalar>(A, B, u, v);
}

using StructuralWorld = StructuralWorldT<double>;
using MrtOptions = MrtOptionsT<double>;
using MrtSolution = MrtSolutionT<double>;

}  // namespace gravity

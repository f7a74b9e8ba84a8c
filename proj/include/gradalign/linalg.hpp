#pragma once

// Dense real linear algebra: one-sided Jacobi SVD, numerical rank,
// minimum-norm least squares and column-space membership.
//
// Matrices are Eigen row-major dense types templated on the scalar. The SVD is
// a Hestenes (one-sided Jacobi) sweep over the rows of the short side, which
// gives singular values to high relative accuracy and needs no external
// LAPACK.

#include "gradalign/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace gradalign {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& a, const char* where) {
  if (!a.allFinite()) throw ContractError(std::string(where) + ": non-finite entries");
}

template <typename Scalar>
struct SvdOptions {
  /// Overrides the default max(m, n) * sigma_max * epsilon cut.
  std::optional<Scalar> rank_threshold;
  int max_sweeps = 100;
};

template <typename Scalar>
struct SvdResult {
  Vector<Scalar> singular_values;  // non-increasing, length min(m, n)
  Matrix<Scalar> left_basis;       // m x min(m, n), orthonormal columns
  Matrix<Scalar> right_basis;      // n x min(m, n), orthonormal columns
  Index numerical_rank = 0;
  Scalar rank_threshold = 0;

  Index rows() const { return left_basis.rows(); }
  Index cols() const { return right_basis.rows(); }

  Matrix<Scalar> reconstruct() const {
    return left_basis * singular_values.asDiagonal() * right_basis.transpose();
  }
};

template <typename Scalar>
Scalar default_rank_threshold(Index rows, Index cols, Scalar sigma_max) {
  return static_cast<Scalar>(std::max(rows, cols)) * sigma_max *
         std::numeric_limits<Scalar>::epsilon();
}

namespace detail {

// Rows of `basis` listed in `filled` are orthonormal; fills every other row
// with a unit vector orthogonal to all filled rows. Each new row starts from
// the canonical vector with the largest residual 1 - sum_s basis(s, i)^2,
// which is at least (len - filled) / len, then Gram-Schmidt twice.
template <typename Scalar>
void complete_orthonormal_rows(Matrix<Scalar>& basis, std::vector<bool>& filled) {
  const Index len = basis.cols();
  Vector<Scalar> residual = Vector<Scalar>::Ones(len);
  for (Index s = 0; s < basis.rows(); ++s) {
    if (filled[s]) residual -= basis.row(s).transpose().cwiseAbs2();
  }
  for (Index r = 0; r < basis.rows(); ++r) {
    if (filled[r]) continue;
    Index best = 0;
    residual.maxCoeff(&best);
    Vector<Scalar> v = Vector<Scalar>::Unit(len, best);
    for (int pass = 0; pass < 2; ++pass) {
      for (Index s = 0; s < basis.rows(); ++s) {
        if (!filled[s]) continue;
        v -= basis.row(s).dot(v) * basis.row(s).transpose();
      }
    }
    const Scalar norm = v.norm();
    if (!(norm > Scalar(0))) throw DecompositionError(basis.rows(), len);
    basis.row(r) = v.transpose() / norm;
    filled[r] = true;
    residual -= basis.row(r).transpose().cwiseAbs2();
  }
}

}  // namespace detail

template <typename Derived>
SvdResult<typename Derived::Scalar> svd(
    const Eigen::MatrixBase<Derived>& a,
    const SvdOptions<typename Derived::Scalar>& options = {}) {
  using Scalar = typename Derived::Scalar;
  const Index m = a.rows();
  const Index n = a.cols();
  if (m == 0 || n == 0) throw ContractError("svd: empty matrix");
  require_finite(a, "svd");

  const bool wide = m <= n;
  const Index k = std::min(m, n);
  const Index len = std::max(m, n);

  // work = Q^T * B with B = A (wide) or A^T (tall); rows of work converge to
  // mutually orthogonal vectors sigma_i * v_i^T.
  Matrix<Scalar> work = wide ? Matrix<Scalar>(a) : Matrix<Scalar>(a.transpose());
  Matrix<Scalar> q_t = Matrix<Scalar>::Identity(k, k);

  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Scalar tol = eps * static_cast<Scalar>(len);
  // Rows below eps * |A|_F are rounding noise; rotating them against each
  // other can cycle without ever meeting the relative test.
  const Scalar negligible = eps * work.norm();
  const Scalar negligible_sq = negligible * negligible;
  bool converged = k == 1;
  for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    for (Index p = 0; p + 1 < k; ++p) {
      for (Index r = p + 1; r < k; ++r) {
        const Scalar alpha = work.row(p).squaredNorm();
        const Scalar beta = work.row(r).squaredNorm();
        if (alpha <= negligible_sq || beta <= negligible_sq) continue;
        const Scalar gamma = work.row(p).dot(work.row(r));
        if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = (zeta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                         (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        Vector<Scalar> row_p = work.row(p).transpose();
        work.row(p) = c * row_p.transpose() - s * work.row(r);
        work.row(r) = s * row_p.transpose() + c * work.row(r);
        Vector<Scalar> q_p = q_t.row(p).transpose();
        q_t.row(p) = c * q_p.transpose() - s * q_t.row(r);
        q_t.row(r) = s * q_p.transpose() + c * q_t.row(r);
      }
    }
    converged = !rotated;
  }
  if (!converged) throw DecompositionError(m, n);

  Vector<Scalar> sigma = work.rowwise().norm();
  std::vector<Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index x, Index y) { return sigma(x) > sigma(y); });

  // Sorted orthonormal directions: long side (length len) and short side (k).
  Matrix<Scalar> long_dirs(k, len);
  Matrix<Scalar> short_dirs(k, k);
  SvdResult<Scalar> result;
  result.singular_values.resize(k);
  std::vector<bool> filled(static_cast<std::size_t>(k), false);
  for (Index i = 0; i < k; ++i) {
    const Index src = order[static_cast<std::size_t>(i)];
    result.singular_values(i) = sigma(src);
    short_dirs.row(i) = q_t.row(src);
    if (sigma(src) > negligible) {
      long_dirs.row(i) = work.row(src) / sigma(src);
      filled[static_cast<std::size_t>(i)] = true;
    } else {
      long_dirs.row(i).setZero();
    }
  }
  detail::complete_orthonormal_rows(long_dirs, filled);

  if (wide) {
    result.left_basis = short_dirs.transpose();
    result.right_basis = long_dirs.transpose();
  } else {
    result.left_basis = long_dirs.transpose();
    result.right_basis = short_dirs.transpose();
  }

  const Scalar sigma_max = result.singular_values(0);
  result.rank_threshold = options.rank_threshold.value_or(default_rank_threshold(m, n, sigma_max));
  result.numerical_rank = (result.singular_values.array() > result.rank_threshold).count();
  return result;
}

template <typename Derived>
Index numerical_rank(const Eigen::MatrixBase<Derived>& a) {
  return svd(a).numerical_rank;
}

/// Moore-Penrose pseudo-inverse applied to y, truncated at the numerical rank.
template <typename Scalar>
Vector<Scalar> pinv_apply(const SvdResult<Scalar>& dec, const Vector<Scalar>& y) {
  if (dec.rows() != y.size()) throw ContractError("pinv_apply: shape mismatch");
  const Index r = dec.numerical_rank;
  Vector<Scalar> coeffs = dec.left_basis.leftCols(r).transpose() * y;
  coeffs.array() /= dec.singular_values.head(r).array();
  return dec.right_basis.leftCols(r) * coeffs;
}

/// y^T A^dagger y for a symmetric positive semidefinite A given its SVD.
template <typename Scalar>
Scalar psd_pinv_quadratic(const SvdResult<Scalar>& dec, const Vector<Scalar>& y) {
  if (dec.rows() != y.size()) throw ContractError("psd_pinv_quadratic: shape mismatch");
  const Index r = dec.numerical_rank;
  const Vector<Scalar> coeffs = dec.left_basis.leftCols(r).transpose() * y;
  return (coeffs.array().square() / dec.singular_values.head(r).array()).sum();
}

template <typename Scalar>
struct LeastSquaresResult {
  Vector<Scalar> solution;
  Scalar residual_norm = 0;
};

template <typename Derived, typename VecDerived>
LeastSquaresResult<typename Derived::Scalar> least_squares(
    const Eigen::MatrixBase<Derived>& a, const Eigen::MatrixBase<VecDerived>& y) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != y.size()) throw ContractError("least_squares: a.rows != len(y)");
  const Vector<Scalar> rhs = y;
  const auto dec = svd(a);
  LeastSquaresResult<Scalar> out;
  out.solution = pinv_apply(dec, rhs);
  out.residual_norm = (a * out.solution - rhs).norm();
  return out;
}

template <typename Scalar>
struct MembershipResult {
  bool member = true;
  Scalar rel_residual = 0;
};

inline constexpr double kDefaultMembershipTol = 1e-6;

/// Membership of y in Col(A) through the orthogonal projector U_r U_r^T.
template <typename Scalar>
MembershipResult<Scalar> col_membership(const SvdResult<Scalar>& dec, const Vector<Scalar>& y,
                                        Scalar rel_tol = Scalar(kDefaultMembershipTol)) {
  if (dec.rows() != y.size()) throw ContractError("col_membership: shape mismatch");
  if (!(rel_tol > Scalar(0))) throw ContractError("col_membership: rel_tol must be > 0");
  const Scalar y_norm = y.norm();
  if (y_norm == Scalar(0)) return {true, Scalar(0)};
  const auto basis = dec.left_basis.leftCols(dec.numerical_rank);
  const Vector<Scalar> residual = y - basis * (basis.transpose() * y);
  MembershipResult<Scalar> out;
  out.rel_residual = residual.norm() / y_norm;
  out.member = out.rel_residual <= rel_tol;
  return out;
}

template <typename Derived, typename VecDerived>
MembershipResult<typename Derived::Scalar> col_membership(
    const Eigen::MatrixBase<Derived>& a, const Eigen::MatrixBase<VecDerived>& y,
    typename Derived::Scalar rel_tol = typename Derived::Scalar(kDefaultMembershipTol)) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != y.size()) throw ContractError("col_membership: a.rows != len(y)");
  if (!(rel_tol > Scalar(0))) throw ContractError("col_membership: rel_tol must be > 0");
  const Vector<Scalar> rhs = y;
  if (rhs.norm() == Scalar(0)) return {true, Scalar(0)};
  return col_membership(svd(a), rhs, rel_tol);
}

template <typename Derived>
typename Derived::Scalar frob_norm_sq(const Eigen::MatrixBase<Derived>& a) {
  return a.squaredNorm();
}

}  // namespace gradalign

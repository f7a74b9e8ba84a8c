#include "helpers.hpp"

#include "gradalign/errors.hpp"
#include "gradalign/linalg.hpp"

#include <Eigen/SVD>
#include <doctest.h>

using namespace gradalign;
using testutil::random_matrix;
using testutil::random_vector;

TEST_CASE("svd singular values agree with a bidiagonal reference") {
  Rng rng(11);
  for (auto [m, n] : {std::pair<Index, Index>{7, 4}, {4, 7}, {12, 12}, {1, 5}, {30, 3}}) {
    const MatrixXd a = random_matrix(rng, m, n);
    const auto dec = svd(a);
    const Eigen::MatrixXd ref_in = a;
    const Eigen::BDCSVD<Eigen::MatrixXd> ref(ref_in);
    REQUIRE(dec.singular_values.size() == std::min(m, n));
    for (Index i = 0; i < dec.singular_values.size(); ++i) {
      CHECK(dec.singular_values(i) ==
            doctest::Approx(ref.singularValues()(i)).epsilon(1e-12));
    }
    CHECK((dec.reconstruct() - a).norm() <= 1e-12 * a.norm());
    const MatrixXd k = MatrixXd::Identity(std::min(m, n), std::min(m, n));
    CHECK((dec.left_basis.transpose() * dec.left_basis - k).norm() < 1e-12);
    CHECK((dec.right_basis.transpose() * dec.right_basis - k).norm() < 1e-12);
  }
}

TEST_CASE("svd singular values are non-increasing and non-negative") {
  Rng rng(3);
  const auto dec = svd(random_matrix(rng, 9, 6));
  for (Index i = 0; i + 1 < dec.singular_values.size(); ++i) {
    CHECK(dec.singular_values(i) >= dec.singular_values(i + 1));
  }
  CHECK(dec.singular_values.minCoeff() >= 0.0);
}

TEST_CASE("numerical rank of products of thin factors") {
  Rng rng(5);
  for (Index r : {1, 3, 6}) {
    const MatrixXd a = random_matrix(rng, 10, r) * random_matrix(rng, r, 8);
    CHECK(numerical_rank(a) == r);
  }
  CHECK(numerical_rank(MatrixXd::Zero(4, 3)) == 0);
}

TEST_CASE("rank-deficient square matrix keeps orthonormal bases") {
  Rng rng(9);
  const MatrixXd a = random_matrix(rng, 40, 5) * random_matrix(rng, 5, 40);
  const auto dec = svd(a);
  CHECK(dec.numerical_rank == 5);
  const MatrixXd k = MatrixXd::Identity(40, 40);
  CHECK((dec.left_basis.transpose() * dec.left_basis - k).norm() < 1e-10);
  CHECK((dec.reconstruct() - a).norm() <= 1e-12 * a.norm());
}

TEST_CASE("graded spectrum down to rounding level matches the reference rank") {
  Rng rng(21);
  const Index n = 60;
  const auto q1 = svd(random_matrix(rng, n, n));
  const auto q2 = svd(random_matrix(rng, n, n));
  VectorXd s(n);
  for (Index i = 0; i < n; ++i) s(i) = std::pow(10.0, -0.3 * static_cast<double>(i));
  const MatrixXd a = q1.left_basis * s.asDiagonal() * q2.right_basis.transpose();
  const auto dec = svd(a);
  const Eigen::MatrixXd ref_in = a;
  const Eigen::BDCSVD<Eigen::MatrixXd> ref(ref_in);
  const double cut = default_rank_threshold(n, n, ref.singularValues()(0));
  CHECK(dec.numerical_rank == (ref.singularValues().array() > cut).count());
}

TEST_CASE("explicit rank threshold overrides the default") {
  MatrixXd a = MatrixXd::Zero(3, 3);
  a.diagonal() << 1.0, 1e-3, 1e-9;
  SvdOptions<double> opts;
  opts.rank_threshold = 1e-6;
  CHECK(svd(a, opts).numerical_rank == 2);
  CHECK(svd(a).numerical_rank == 3);
}

TEST_CASE("float instantiation") {
  Matrix<float> a(3, 2);
  a << 1, 2, 3, 4, 5, 6;
  const auto dec = svd(a);
  CHECK(dec.singular_values(0) == doctest::Approx(9.5255180).epsilon(1e-5));
  CHECK(dec.singular_values(1) == doctest::Approx(0.5143006).epsilon(1e-4));
}

TEST_CASE("svd rejects empty and non-finite input") {
  CHECK_THROWS_AS(svd(MatrixXd(0, 3)), ContractError);
  MatrixXd a = MatrixXd::Ones(2, 2);
  a(0, 1) = std::nan("");
  CHECK_THROWS_AS(svd(a), ContractError);
}

TEST_CASE("least squares matches normal equations on a full-rank tall system") {
  Rng rng(8);
  const MatrixXd a = random_matrix(rng, 15, 4);
  const VectorXd y = random_vector(rng, 15);
  const auto ls = least_squares(a, y);
  const Eigen::MatrixXd ata = a.transpose() * a;
  const Eigen::VectorXd aty = a.transpose() * y;
  const VectorXd ref = ata.ldlt().solve(aty);
  CHECK((ls.solution - ref).norm() < 1e-10 * ref.norm());
  CHECK(ls.residual_norm == doctest::Approx((a * ref - y).norm()).epsilon(1e-10));
}

TEST_CASE("pseudo-inverse gives the minimum-norm solution of a wide system") {
  Rng rng(4);
  const MatrixXd a = random_matrix(rng, 3, 8);
  const VectorXd y = random_vector(rng, 3);
  const auto ls = least_squares(a, y);
  CHECK(ls.residual_norm < 1e-12);
  const Eigen::MatrixXd aat = a * a.transpose();
  const VectorXd ref = a.transpose() * aat.ldlt().solve(Eigen::VectorXd(y));
  CHECK((ls.solution - ref).norm() < 1e-10 * ref.norm());
}

TEST_CASE("column-space membership") {
  Rng rng(2);
  const MatrixXd a = random_matrix(rng, 12, 3);
  const VectorXd inside = a * random_vector(rng, 3);
  CHECK(col_membership(a, inside).member);
  CHECK(col_membership(a, inside).rel_residual < 1e-12);

  // Component orthogonal to Col(A): residual is exactly its relative size.
  const auto dec = svd(a);
  VectorXd w = random_vector(rng, 12);
  w -= dec.left_basis * (dec.left_basis.transpose() * w);
  const VectorXd mixed = inside + 0.5 * w.normalized() * inside.norm();
  const auto res = col_membership(a, mixed);
  CHECK_FALSE(res.member);
  CHECK(res.rel_residual == doctest::Approx(0.5 / std::sqrt(1.25)).epsilon(1e-10));

  CHECK(col_membership(a, VectorXd::Zero(12)).member);
  CHECK_THROWS_AS(col_membership(a, VectorXd::Zero(5)), ContractError);
  CHECK_THROWS_AS(col_membership(a, inside, 0.0), ContractError);
}

TEST_CASE("membership on an identity matrix always holds") {
  Rng rng(6);
  CHECK(col_membership(MatrixXd::Identity(5, 5), random_vector(rng, 5)).member);
}

TEST_CASE("psd pseudo-inverse quadratic form") {
  // y^T (B B^T)^+ y = |B^+ y|^2 with B^+ = (B^T B)^{-1} B^T for full column rank B.
  Rng rng(10);
  const MatrixXd b = random_matrix(rng, 6, 3);
  const VectorXd y = random_vector(rng, 6);
  const Eigen::MatrixXd btb = b.transpose() * b;
  const VectorXd z = btb.ldlt().solve(Eigen::VectorXd(b.transpose() * y));
  CHECK(psd_pinv_quadratic(svd(MatrixXd(b * b.transpose())), y) ==
        doctest::Approx(z.squaredNorm()).epsilon(1e-8));
}

#include "helpers.hpp"

#include "gradalign/errors.hpp"
#include "gradalign/losses.hpp"

#include <doctest.h>

using namespace gradalign;
using testutil::random_vector;

namespace {

VectorXd binary_target(Rng& rng, Index m) {
  VectorXd y(m);
  for (Index k = 0; k < m; ++k) y(k) = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return y;
}

VectorXd one_hot(Index m, Index k) { return VectorXd::Unit(m, k); }

VectorXd target_for(LossKind kind, Rng& rng, Index m) {
  if (kind == LossKind::squared) return random_vector(rng, m);
  if (kind == LossKind::binary_ce) return binary_target(rng, m);
  return one_hot(m, static_cast<Index>(rng.below(static_cast<std::uint64_t>(m))));
}

const LossKind kAll[] = {LossKind::squared, LossKind::binary_ce, LossKind::multiclass_ce};

}  // namespace

TEST_CASE("closed-form values") {
  VectorXd q(2), y(2);
  q << 1.0, -2.0;
  y << 0.5, 1.0;
  CHECK(loss_value(LossKind::squared, q, y) == doctest::Approx(0.25 + 9.0));

  y << 1.0, 0.0;
  const double bce = std::log1p(std::exp(1.0)) - 1.0 + std::log1p(std::exp(-2.0));
  CHECK(loss_value(LossKind::binary_ce, q, y) == doctest::Approx(bce).epsilon(1e-14));

  const double lse = std::log(std::exp(1.0) + std::exp(-2.0));
  CHECK(loss_value(LossKind::multiclass_ce, q, y) == doctest::Approx(lse - 1.0).epsilon(1e-14));
}

TEST_CASE("gradients match central differences") {
  Rng rng(12);
  for (LossKind kind : kAll) {
    for (int trial = 0; trial < 10; ++trial) {
      const VectorXd q = random_vector(rng, 4, 3.0);
      const VectorXd y = target_for(kind, rng, 4);
      const VectorXd g = loss_grad(kind, q, y);
      for (Index k = 0; k < 4; ++k) {
        const double h = 1e-6;
        VectorXd qp = q, qm = q;
        qp(k) += h;
        qm(k) -= h;
        const double fd = (loss_value(kind, qp, y) - loss_value(kind, qm, y)) / (2 * h);
        CHECK(g(k) == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
      }
    }
  }
}

TEST_CASE("gradient Lipschitz constants bound observed gradient differences") {
  Rng rng(13);
  for (LossKind kind : kAll) {
    double worst = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
      const VectorXd y = target_for(kind, rng, 3);
      const VectorXd a = random_vector(rng, 3, 2.0);
      const VectorXd b = a + random_vector(rng, 3, 0.01);
      const double q = (loss_grad(kind, a, y) - loss_grad(kind, b, y)).norm() / (a - b).norm();
      worst = std::max(worst, q);
    }
    CHECK(worst <= lipschitz_constant(kind) * (1.0 + 1e-9));
  }
}

TEST_CASE("losses are convex along random segments") {
  Rng rng(14);
  for (LossKind kind : kAll) {
    for (int trial = 0; trial < 200; ++trial) {
      const VectorXd y = target_for(kind, rng, 3);
      const VectorXd a = random_vector(rng, 3, 5.0);
      const VectorXd b = random_vector(rng, 3, 5.0);
      const double lam = rng.uniform();
      const double mid = loss_value(kind, lam * a + (1 - lam) * b, y);
      const double chord = lam * loss_value(kind, a, y) + (1 - lam) * loss_value(kind, b, y);
      CHECK(mid <= chord + 1e-10);
    }
  }
}

TEST_CASE("extreme logits stay finite") {
  VectorXd q(2), y(2);
  q << 800.0, -800.0;
  y << 0.0, 1.0;
  CHECK(loss_value(LossKind::binary_ce, q, y) == doctest::Approx(1600.0));
  CHECK(loss_grad(LossKind::binary_ce, q, y).allFinite());
  y << 1.0, 0.0;
  CHECK(loss_value(LossKind::binary_ce, q, y) == doctest::Approx(0.0));
  CHECK(loss_value(LossKind::multiclass_ce, q, y) == doctest::Approx(0.0));
  CHECK(log1p_exp(-800.0) == 0.0);
  CHECK(sigmoid(-800.0) == 0.0);
}

TEST_CASE("modified target") {
  MatrixXd y(3, 1);
  y << 0.0, 1.0, 1.0;
  MatrixXd expect(3, 1);
  expect << -1.0, 1.0, 1.0;
  CHECK(modified_target(LossKind::binary_ce, y) == expect);
  CHECK(modified_target(LossKind::squared, y) == y);
  MatrixXd onehot(2, 2);
  onehot << 1, 0, 0, 1;
  MatrixXd expect2(2, 2);
  expect2 << 1, -1, -1, 1;
  CHECK(modified_target(LossKind::multiclass_ce, onehot) == expect2);
}

TEST_CASE("reference loss is the loss of eta times the modified target") {
  MatrixXd y(2, 1);
  y << 0.0, 1.0;
  const MatrixXd ys = modified_target(LossKind::binary_ce, y);
  // Both samples give log(1 + e^{-eta}).
  for (double eta : {1.0, 5.0, 10.0}) {
    CHECK(reference_loss(LossKind::binary_ce, y, ys, eta) ==
          doctest::Approx(std::log1p(std::exp(-eta))).epsilon(1e-14));
  }
  CHECK(reference_loss(LossKind::squared, y, y, 1.0) == 0.0);
}

TEST_CASE("error rate") {
  MatrixXd out(4, 1), y(4, 1);
  out << 0.3, -0.1, 2.0, -5.0;
  y << 1.0, 0.0, 0.0, 0.0;
  CHECK(error_rate(LossKind::binary_ce, out, y) == doctest::Approx(0.25));
  CHECK(error_rate(LossKind::squared, out, y) == doctest::Approx(0.5));
  MatrixXd o2(2, 3), y2(2, 3);
  o2 << 0, 1, 0, 3, 2, 1;
  y2 << 0, 1, 0, 0, 0, 1;
  CHECK(error_rate(LossKind::multiclass_ce, o2, y2) == doctest::Approx(0.5));
}

TEST_CASE("target validation") {
  MatrixXd y(2, 1);
  y << 0.0, 0.5;
  CHECK_THROWS_AS(validate_targets(LossKind::binary_ce, y), ContractError);
  CHECK_NOTHROW(validate_targets(LossKind::squared, y));
  MatrixXd two(1, 2);
  two << 1.0, 1.0;
  CHECK_THROWS_AS(validate_targets(LossKind::multiclass_ce, two), ContractError);
  CHECK_THROWS_AS(parse_loss_kind("hinge"), ContractError);
  CHECK(parse_loss_kind(to_string(LossKind::multiclass_ce)) == LossKind::multiclass_ce);
}

#pragma once

// Per-sample losses l(q, y) on pre-activation outputs q. The sigmoid/softmax
// output nonlinearity is part of the loss, so networks emit raw logits.
//
// Gradient-Lipschitz constants of q -> l(q, y):
//   squared        l = |q - y|^2,                  Hessian 2I            -> 2
//   binary_ce      l = sum_k softplus(q_k) - y_k q_k, Hessian diag(s(1-s)) -> 1/4
//   multiclass_ce  l = logsumexp(q) - q^T y,        Hessian diag(p) - pp^T,
//                  spectral norm <= max_k p_k <= 1                          -> 1

#include "gradalign/linalg.hpp"

#include <string>
#include <string_view>

namespace gradalign {

enum class LossKind { squared, binary_ce, multiclass_ce };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

double lipschitz_constant(LossKind kind);

/// Throws ContractError unless every row of y is a valid target for `kind`.
void validate_targets(LossKind kind, const MatrixXd& y);

double loss_value(LossKind kind, const VectorXd& q, const VectorXd& y);
VectorXd loss_grad(LossKind kind, const VectorXd& q, const VectorXd& y);

/// Mean loss over rows of outputs/targets.
double mean_loss(LossKind kind, const MatrixXd& outputs, const MatrixXd& targets);

/// Row i holds the gradient of l(outputs_i, targets_i) (not averaged).
MatrixXd loss_grad_rows(LossKind kind, const MatrixXd& outputs, const MatrixXd& targets);

/// Y for the squared loss, 2Y - 1 for the cross-entropy kinds.
MatrixXd modified_target(LossKind kind, const MatrixXd& y);

/// (1/n) sum_i l(eta * ystar_i, y_i).
double reference_loss(LossKind kind, const MatrixXd& y, const MatrixXd& y_star, double eta);

/// Fraction of rows whose prediction disagrees with the target label.
double error_rate(LossKind kind, const MatrixXd& outputs, const MatrixXd& targets);

// Overflow-safe scalar helpers shared with the model.
double log1p_exp(double x);
double sigmoid(double x);

}  // namespace gradalign

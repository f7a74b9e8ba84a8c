#include "gradalign/losses.hpp"

#include <cmath>

namespace gradalign {

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::squared: return "squared";
    case LossKind::binary_ce: return "binary_ce";
    case LossKind::multiclass_ce: return "multiclass_ce";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "squared") return LossKind::squared;
  if (name == "binary_ce") return LossKind::binary_ce;
  if (name == "multiclass_ce") return LossKind::multiclass_ce;
  throw ContractError("unknown loss kind '" + std::string(name) + "'");
}

double lipschitz_constant(LossKind kind) {
  switch (kind) {
    case LossKind::squared: return 2.0;
    case LossKind::binary_ce: return 0.25;
    case LossKind::multiclass_ce: return 1.0;
  }
  return 0.0;
}

double log1p_exp(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

bool is_binary(double v) { return v == 0.0 || v == 1.0; }

void check_pair(LossKind kind, const VectorXd& q, const VectorXd& y) {
  if (q.size() != y.size()) throw ContractError("loss: output/target length mismatch");
  if (kind == LossKind::squared) return;
  for (Index k = 0; k < y.size(); ++k) {
    if (!is_binary(y(k))) throw ContractError("loss: cross-entropy targets must be 0/1");
  }
  if (kind == LossKind::multiclass_ce && y.sum() != 1.0) {
    throw ContractError("loss: multiclass_ce target must be one-hot");
  }
}

double logsumexp(const VectorXd& q) {
  const double top = q.maxCoeff();
  return top + std::log((q.array() - top).exp().sum());
}

}  // namespace

void validate_targets(LossKind kind, const MatrixXd& y) {
  require_finite(y, "targets");
  if (kind == LossKind::squared) return;
  for (Index i = 0; i < y.rows(); ++i) {
    for (Index k = 0; k < y.cols(); ++k) {
      if (!is_binary(y(i, k))) {
        throw ContractError("targets: row " + std::to_string(i) +
                            " has a non-{0,1} entry for a cross-entropy loss");
      }
    }
    if (kind == LossKind::multiclass_ce && y.row(i).sum() != 1.0) {
      throw ContractError("targets: row " + std::to_string(i) + " is not one-hot");
    }
  }
}

double loss_value(LossKind kind, const VectorXd& q, const VectorXd& y) {
  check_pair(kind, q, y);
  switch (kind) {
    case LossKind::squared: return (q - y).squaredNorm();
    case LossKind::binary_ce: {
      double total = 0.0;
      for (Index k = 0; k < q.size(); ++k) total += log1p_exp(q(k)) - y(k) * q(k);
      return total;
    }
    case LossKind::multiclass_ce: return std::max(0.0, logsumexp(q) - q.dot(y));
  }
  return 0.0;
}

VectorXd loss_grad(LossKind kind, const VectorXd& q, const VectorXd& y) {
  check_pair(kind, q, y);
  switch (kind) {
    case LossKind::squared: return 2.0 * (q - y);
    case LossKind::binary_ce: {
      VectorXd g(q.size());
      for (Index k = 0; k < q.size(); ++k) g(k) = sigmoid(q(k)) - y(k);
      return g;
    }
    case LossKind::multiclass_ce: {
      const double top = q.maxCoeff();
      VectorXd p = (q.array() - top).exp();
      p /= p.sum();
      return p - y;
    }
  }
  return {};
}

double mean_loss(LossKind kind, const MatrixXd& outputs, const MatrixXd& targets) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols()) {
    throw ContractError("mean_loss: shape mismatch");
  }
  if (outputs.rows() == 0) throw ContractError("mean_loss: empty batch");
  double total = 0.0;
  for (Index i = 0; i < outputs.rows(); ++i) {
    total += loss_value(kind, outputs.row(i).transpose(), targets.row(i).transpose());
  }
  return total / static_cast<double>(outputs.rows());
}

MatrixXd loss_grad_rows(LossKind kind, const MatrixXd& outputs, const MatrixXd& targets) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols()) {
    throw ContractError("loss_grad_rows: shape mismatch");
  }
  MatrixXd g(outputs.rows(), outputs.cols());
  for (Index i = 0; i < outputs.rows(); ++i) {
    g.row(i) = loss_grad(kind, outputs.row(i).transpose(), targets.row(i).transpose()).transpose();
  }
  return g;
}

MatrixXd modified_target(LossKind kind, const MatrixXd& y) {
  validate_targets(kind, y);
  if (kind == LossKind::squared) return y;
  return (2.0 * y.array() - 1.0).matrix();
}

double reference_loss(LossKind kind, const MatrixXd& y, const MatrixXd& y_star, double eta) {
  if (y.rows() != y_star.rows() || y.cols() != y_star.cols()) {
    throw ContractError("reference_loss: shape mismatch");
  }
  return mean_loss(kind, eta * y_star, y);
}

double error_rate(LossKind kind, const MatrixXd& outputs, const MatrixXd& targets) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols()) {
    throw ContractError("error_rate: shape mismatch");
  }
  const Index n = outputs.rows();
  if (n == 0) return 0.0;
  Index wrong = 0;
  for (Index i = 0; i < n; ++i) {
    if (outputs.cols() == 1) {
      const double cut = kind == LossKind::squared ? 0.5 : 0.0;
      const bool predicted = outputs(i, 0) > cut;
      const bool label = targets(i, 0) > 0.5;
      wrong += predicted != label ? 1 : 0;
    } else {
      Index pred = 0, label = 0;
      outputs.row(i).maxCoeff(&pred);
      targets.row(i).maxCoeff(&label);
      wrong += pred != label ? 1 : 0;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(n);
}

}  // namespace gradalign

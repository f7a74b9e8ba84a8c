#pragma once

// Certificates and bounds evaluated on network checkpoints: column-space
// alignment of the modified target, the Gram matrix and its drift, the phi
// feature matrix of a frozen gated head, the optimality-gap bound, the
// exploitation Lipschitz constant, and the closed-form exploitation gradient.

#include "gradalign/data.hpp"
#include "gradalign/linalg.hpp"
#include "gradalign/losses.hpp"
#include "gradalign/model.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace gradalign {

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------
enum class MembershipMethod { automatic, direct_lsq, gram };

std::string_view to_string(MembershipMethod method);
MembershipMethod parse_membership_method(std::string_view name);

struct AlignmentOptions {
  double rel_tol = kDefaultMembershipTol;
  MembershipMethod method = MembershipMethod::automatic;
  Index jacobian_cap = kDefaultJacobianCap;
};

struct AlignmentRecord {
  std::int64_t step = 0;
  bool aligned = false;
  double rel_residual = 0.0;
  MembershipMethod method = MembershipMethod::direct_lsq;
  Index rank = 0;
};

/// automatic: direct_lsq when n*m_y <= d and (n*m_y)*d fits the cap, gram otherwise.
MembershipMethod resolve_method(Index rows, Index cols, const AlignmentOptions& options);

/// Singular values / left vectors of J from its compressed factor, with the
/// rank cut max(n*m_y, d) * sigma_max * eps taken on J's own shape.
SvdResult<double> jacobian_svd(const FactoredJacobian& jac);

AlignmentRecord alignment(const FactoredJacobian& jac, const VectorXd& target,
                          const AlignmentOptions& options = {});

/// vec(Y_ell) in Col(d vec(f_X) / d theta).
AlignmentRecord alignment(const Network& net, const VectorXd& theta, const GateState& gates,
                          const Dataset& data, const AlignmentOptions& options = {});

/// Q_T: running count of unaligned records.
std::vector<std::int64_t> q_counter(const std::vector<AlignmentRecord>& records);

// ---------------------------------------------------------------------------
// Gram matrix
// ---------------------------------------------------------------------------
MatrixXd gram(const Network& net, const VectorXd& theta, const GateState& gates,
              const MatrixXd& x, Index cap = kDefaultJacobianCap);

/// |M_after - M_before|_F^2.
double drift(const MatrixXd& m_before, const MatrixXd& m_after);

// ---------------------------------------------------------------------------
// phi and the frozen gated head
// ---------------------------------------------------------------------------
/// z = [h_{H-2}(x); 1] for each row of x (gated networks).
MatrixXd head_inputs(const Network& net, const VectorXd& theta, const MatrixXd& x);

/// n x (m_H * m_{H-1}); row i, columns [k*m_{H-1}, (k+1)*m_{H-1}) hold
/// gate(z_i^T q_{*k}) z_i^T. q is m_{H-1} x m_H.
MatrixXd phi(const MatrixXd& q, const MatrixXd& z, double gate_sharpness);
MatrixXd phi(const MatrixXd& q, const Network& net, const VectorXd& theta, const MatrixXd& x,
             Index cap = kDefaultJacobianCap);

/// phi [diag(theta_hj) (x) I] v without forming the Kronecker factor.
VectorXd scaled_phi_apply(const MatrixXd& phi_matrix, const VectorXd& theta_hj,
                          const VectorXd& v);

/// ceil(2n / m_{H-1}).
Index head_width_rule(Index n, Index gate_input_dim);

struct SafeExplorationCertificate {
  Index n = 0;
  Index head_width = 0;        // m_H
  Index gate_input_dim = 0;    // m_{H-1}
  Index phi_rank = 0;          // one-sided Jacobi
  Index phi_rank_check = 0;    // divide-and-conquer bidiagonal SVD
  bool satisfied = false;
  std::uint64_t seed = 0;
};

/// Draws theta from the default init and q ~ N(0, 1) entrywise, then
/// reports rank(phi(q, theta_lower)) for the given inputs.
SafeExplorationCertificate safe_exploration_check(const NetworkSpec& spec, const MatrixXd& x,
                                                  std::uint64_t seed,
                                                  Index cap = kDefaultJacobianCap);

struct LhatResult {
  double lhat = 0.0;
  VectorXd z_norms;  // Z
};

/// L_hat = (L_l / n) |Z|^2, Z_i = max_j |[diag(theta_Hj) (x) I] phi_j(i, :)^T|.
LhatResult lhat(const Network& net, const VectorXd& theta, const GateState& gates,
                const MatrixXd& x, LossKind kind);

/// Gradient of the frozen-gate loss w.r.t. theta_(H-1), assembled per output
/// from [diag(theta_Hj) (x) I] phi_j^T r_j with r_j = (1/n) dl_i/dq_j.
VectorXd exploitation_grad_closed_form(const Network& net, const VectorXd& theta,
                                       const GateState& gates, const Dataset& data);

// ---------------------------------------------------------------------------
// Bound terms
// ---------------------------------------------------------------------------
/// eta * J^dagger vec(y_star) from a dense J.
VectorXd beta_hat(const MatrixXd& j, const VectorXd& y_star, double eta);

struct BetaHat {
  VectorXd beta;
  double norm_sq = 0.0;
};
/// Same, through J^T (J J^T)^dagger with the spectrum of J's compressed factor.
BetaHat beta_hat(const FactoredJacobian& jac, const VectorXd& y_star, double eta);

/// Quantities recorded at one trajectory point for the bound.
struct BoundTerms {
  std::int64_t step = 0;
  double loss = 0.0;
  bool aligned = false;
  double nu_sq = 0.0;         // |nu(theta)|^2
  double beta_unit_sq = 0.0;  // |beta_hat(theta, 1)|^2
};

BoundTerms bound_terms(const Network& net, const VectorXd& theta, const GateState& gates,
                       const Dataset& data, std::int64_t step,
                       const AlignmentOptions& options = {});

struct BoundReport {
  double eta = 0.0;
  double reference = 0.0;
  double zeta_eta = 0.0;
  double L_used = 0.0;
  double alpha = 0.0;
  std::vector<std::int64_t> alignment_steps;
  double lhs = 0.0;
  double rhs = 0.0;
  bool applicable = false;
  bool holds = false;
};

/// min_{t in T} L <= L*(eta Y*) + sqrt(L zeta L(theta^{t0}) / (2 alpha (1 - alpha))) / sqrt|T|
/// over the aligned records. Not applicable when no record is aligned or
/// alpha is outside (0, 1).
BoundReport bound_check(const std::vector<BoundTerms>& records, const Dataset& data,
                        double eta, double alpha, double L_used);

/// bound_check on every prefix of the aligned steps.
std::vector<BoundReport> bound_check_prefixes(const std::vector<BoundTerms>& records,
                                              const Dataset& data, double eta, double alpha,
                                              double L_used);

/// |g_b - g_a| / |theta_b - theta_a| (0 when theta_b == theta_a).
double lipschitz_quotient(const VectorXd& theta_a, const VectorXd& grad_a,
                          const VectorXd& theta_b, const VectorXd& grad_b);

struct KeyInequality {
  double lhs = 0.0;
  double linearized = 0.0;  // L_theta(beta)
  double rhs = 0.0;
  bool holds = false;
};

/// L(theta) <= L_theta(beta) + |nu(theta) - beta| |grad L(theta)|.
KeyInequality key_inequality_check(const Network& net, const VectorXd& theta,
                                   const GateState& gates, const Dataset& data,
                                   const VectorXd& beta);

struct NecessityResult {
  bool applicable = false;
  bool aligned = false;
  double eta_star = 0.0;
  double rel_residual = 0.0;  // min_eta |f_X - eta Y_ell|_F / |Y_ell|_F
  bool violation = false;
};

/// An unaligned point where f_X is (up to tol) a multiple of Y_ell would
/// contradict the alignment necessity result; `violation` flags it.
NecessityResult necessity_check(const MatrixXd& outputs, const MatrixXd& y_ell, bool aligned,
                                double tol = 1e-6);
NecessityResult necessity_check(const Network& net, const VectorXd& theta, const GateState& gates,
                                const Dataset& data, const AlignmentOptions& options = {},
                                double tol = 1e-6);

}  // namespace gradalign

#include "gradalign/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gradalign {

std::string_view to_string(MembershipMethod method) {
  switch (method) {
    case MembershipMethod::automatic: return "auto";
    case MembershipMethod::direct_lsq: return "direct_lsq";
    case MembershipMethod::gram: return "gram";
  }
  return "auto";
}

MembershipMethod parse_membership_method(std::string_view name) {
  if (name == "auto") return MembershipMethod::automatic;
  if (name == "direct_lsq") return MembershipMethod::direct_lsq;
  if (name == "gram") return MembershipMethod::gram;
  throw ContractError("unknown membership method '" + std::string(name) + "'");
}

MembershipMethod resolve_method(Index rows, Index cols, const AlignmentOptions& options) {
  if (options.method != MembershipMethod::automatic) return options.method;
  const bool fits = cols > 0 && rows <= options.jacobian_cap / cols;
  return rows <= cols && fits ? MembershipMethod::direct_lsq : MembershipMethod::gram;
}

SvdResult<double> jacobian_svd(const FactoredJacobian& jac) {
  auto dec = svd(jac.compressed());
  dec.rank_threshold =
      default_rank_threshold(jac.rows(), jac.cols(), dec.singular_values(0));
  dec.numerical_rank = (dec.singular_values.array() > dec.rank_threshold).count();
  return dec;
}

AlignmentRecord alignment(const FactoredJacobian& jac, const VectorXd& target,
                          const AlignmentOptions& options) {
  if (target.size() != jac.rows()) throw ContractError("alignment: target length mismatch");
  AlignmentRecord rec;
  rec.method = resolve_method(jac.rows(), jac.cols(), options);
  SvdResult<double> dec;
  if (rec.method == MembershipMethod::direct_lsq) {
    dec = jacobian_svd(jac);
  } else {
    if (jac.rows() > options.jacobian_cap / jac.rows()) {
      throw SizeError("Gram matrix of order " + std::to_string(jac.rows()) +
                      " exceeds the materialization cap");
    }
    dec = svd(jac.gram());
  }
  const auto mem = col_membership(dec, target, options.rel_tol);
  rec.aligned = mem.member;
  rec.rel_residual = mem.rel_residual;
  rec.rank = dec.numerical_rank;
  return rec;
}

AlignmentRecord alignment(const Network& net, const VectorXd& theta, const GateState& gates,
                          const Dataset& data, const AlignmentOptions& options) {
  return alignment(factored_jacobian(net, theta, gates, data.X), vec_columns(data.Y_ell),
                   options);
}

std::vector<std::int64_t> q_counter(const std::vector<AlignmentRecord>& records) {
  std::vector<std::int64_t> out;
  out.reserve(records.size());
  std::int64_t q = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (i > 0 && records[i].step <= records[i - 1].step) {
      throw ContractError("q_counter: records must be step-ordered");
    }
    if (!records[i].aligned) ++q;
    out.push_back(q);
  }
  return out;
}

MatrixXd gram(const Network& net, const VectorXd& theta, const GateState& gates,
              const MatrixXd& x, Index cap) {
  const Index n_rows = x.rows() * net.spec().output_dim();
  if (n_rows > 0 && n_rows > cap / n_rows) {
    throw SizeError("Gram matrix of order " + std::to_string(n_rows) +
                    " exceeds the materialization cap");
  }
  return factored_jacobian(net, theta, gates, x).gram();
}

double drift(const MatrixXd& m_before, const MatrixXd& m_after) {
  if (m_before.rows() != m_after.rows() || m_before.cols() != m_after.cols()) {
    throw ContractError("drift: shape mismatch");
  }
  return frob_norm_sq(m_after - m_before);
}

// ---------------------------------------------------------------------------
// phi
// ---------------------------------------------------------------------------
namespace {

void require_gated(const Network& net, const char* where) {
  if (!net.gated()) throw ContractError(std::string(where) + ": network has no gated head");
}

void require_frozen(const GateState& gates, const char* where) {
  if (!gates.frozen) throw ContractError(std::string(where) + ": gates must be frozen");
}

MatrixXd gate_values(const MatrixXd& z, const MatrixXd& r, double sharpness) {
  return (z * r.transpose()).unaryExpr([sharpness](double u) { return sigmoid(sharpness * u); });
}

}  // namespace

MatrixXd head_inputs(const Network& net, const VectorXd& theta, const MatrixXd& x) {
  require_gated(net, "head_inputs");
  return forward_cache(net, theta, GateState{}, x).z;
}

MatrixXd phi(const MatrixXd& q, const MatrixXd& z, double gate_sharpness) {
  if (q.rows() != z.cols()) throw ContractError("phi: q must have m_{H-1} rows");
  const Index m_h = q.cols();
  const Index m_h1 = q.rows();
  const MatrixXd s = (z * q).unaryExpr(
      [gate_sharpness](double u) { return sigmoid(gate_sharpness * u); });
  MatrixXd out(z.rows(), m_h * m_h1);
  for (Index i = 0; i < z.rows(); ++i) {
    for (Index k = 0; k < m_h; ++k) out.row(i).segment(k * m_h1, m_h1) = s(i, k) * z.row(i);
  }
  return out;
}

MatrixXd phi(const MatrixXd& q, const Network& net, const VectorXd& theta, const MatrixXd& x,
             Index cap) {
  require_gated(net, "phi");
  const Index m_h = net.spec().head_width();
  const Index m_h1 = net.spec().gate_input_dim();
  if (q.rows() != m_h1 || q.cols() != m_h) throw ContractError("phi: q must be m_{H-1} x m_H");
  if (x.rows() > 0 && m_h * m_h1 > cap / x.rows()) {
    throw SizeError("phi of " + std::to_string(x.rows()) + "x" + std::to_string(m_h * m_h1) +
                    " exceeds the materialization cap");
  }
  return phi(q, head_inputs(net, theta, x), net.spec().gate_sharpness);
}

VectorXd scaled_phi_apply(const MatrixXd& phi_matrix, const VectorXd& theta_hj,
                          const VectorXd& v) {
  const Index m_h = theta_hj.size();
  if (m_h == 0 || v.size() != phi_matrix.cols() || v.size() % m_h != 0) {
    throw ContractError("scaled_phi_apply: shape mismatch");
  }
  const Index m_h1 = v.size() / m_h;
  VectorXd scaled = v;
  for (Index k = 0; k < m_h; ++k) scaled.segment(k * m_h1, m_h1) *= theta_hj(k);
  return phi_matrix * scaled;
}

Index head_width_rule(Index n, Index gate_input_dim) {
  if (n < 1 || gate_input_dim < 1) throw ContractError("head_width_rule: n, m_{H-1} >= 1");
  return (2 * n + gate_input_dim - 1) / gate_input_dim;
}

SafeExplorationCertificate safe_exploration_check(const NetworkSpec& spec, const MatrixXd& x,
                                                  std::uint64_t seed, Index cap) {
  const Network net(spec);
  require_gated(net, "safe_exploration_check");
  Rng init(seed, Stream::init);
  const VectorXd theta = net.init_params(init);
  const Index m_h = spec.head_width();
  const Index m_h1 = spec.gate_input_dim();
  Rng probe(seed, Stream::probe);
  MatrixXd q(m_h1, m_h);
  for (Index r = 0; r < m_h1; ++r) {
    for (Index c = 0; c < m_h; ++c) q(r, c) = probe.normal();
  }
  const MatrixXd p = phi(q, net, theta, x, cap);

  SafeExplorationCertificate cert;
  cert.n = x.rows();
  cert.head_width = m_h;
  cert.gate_input_dim = m_h1;
  cert.seed = seed;
  cert.phi_rank = svd(p).numerical_rank;

  const Eigen::MatrixXd col_major = p;
  const Eigen::BDCSVD<Eigen::MatrixXd> check(col_major);
  const auto& s = check.singularValues();
  const double cut = s.size() > 0 ? default_rank_threshold(p.rows(), p.cols(), s(0)) : 0.0;
  cert.phi_rank_check = (s.array() > cut).count();
  cert.satisfied = cert.phi_rank == cert.n;
  return cert;
}

LhatResult lhat(const Network& net, const VectorXd& theta, const GateState& gates,
                const MatrixXd& x, LossKind kind) {
  require_gated(net, "lhat");
  require_frozen(gates, "lhat");
  net.check_gates(gates);
  const auto& layout = net.layout();
  const MatrixXd z = head_inputs(net, theta, x);
  const VectorXd z_norm = z.rowwise().norm();
  VectorXd best = VectorXd::Zero(x.rows());
  for (Index j = 0; j < net.spec().output_dim(); ++j) {
    const IndexRange row = layout.head_row(j);
    const VectorXd theta_hj = theta.segment(row.begin, row.size());
    const MatrixXd s = gate_values(z, gates.R[static_cast<std::size_t>(j)], net.spec().gate_sharpness);
    const VectorXd scaled_sq = (s * theta_hj.asDiagonal()).rowwise().squaredNorm();
    best = best.cwiseMax(scaled_sq);
  }
  LhatResult out;
  out.z_norms = z_norm.cwiseProduct(best.cwiseSqrt());
  out.lhat = lipschitz_constant(kind) / static_cast<double>(x.rows()) * out.z_norms.squaredNorm();
  return out;
}

VectorXd exploitation_grad_closed_form(const Network& net, const VectorXd& theta,
                                       const GateState& gates, const Dataset& data) {
  require_gated(net, "exploitation_grad_closed_form");
  require_frozen(gates, "exploitation_grad_closed_form");
  const auto& layout = net.layout();
  const Index n = data.size();
  const MatrixXd r =
      loss_grad_rows(data.kind, forward(net, theta, gates, data.X), data.Y) / static_cast<double>(n);
  const MatrixXd z = head_inputs(net, theta, data.X);
  const IndexRange hidden = layout.layer(net.spec().depth() - 2);
  VectorXd out(hidden.size());
  for (Index j = 0; j < net.spec().output_dim(); ++j) {
    const MatrixXd p =
        phi(MatrixXd(gates.R[static_cast<std::size_t>(j)].transpose()), z, net.spec().gate_sharpness);
    VectorXd g = p.transpose() * r.col(j);
    const IndexRange row = layout.head_row(j);
    const Index m_h1 = net.spec().gate_input_dim();
    for (Index k = 0; k < row.size(); ++k) g.segment(k * m_h1, m_h1) *= theta(row.begin + k);
    out.segment(layout.hidden_block(j).offset - hidden.begin, g.size()) = g;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bound terms
// ---------------------------------------------------------------------------
VectorXd beta_hat(const MatrixXd& j, const VectorXd& y_star, double eta) {
  return eta * least_squares(j, y_star).solution;
}

namespace {

// Coefficients of y in the retained left singular basis, divided by sigma^2.
VectorXd pinv_gram_coeffs(const SvdResult<double>& dec, const VectorXd& y) {
  const Index r = dec.numerical_rank;
  VectorXd c = dec.left_basis.leftCols(r).transpose() * y;
  c.array() /= dec.singular_values.head(r).array().square();
  return c;
}

double pinv_norm_sq(const SvdResult<double>& dec, const VectorXd& y) {
  const Index r = dec.numerical_rank;
  const VectorXd c = dec.left_basis.leftCols(r).transpose() * y;
  return (c.array() / dec.singular_values.head(r).array()).square().sum();
}

}  // namespace

BetaHat beta_hat(const FactoredJacobian& jac, const VectorXd& y_star, double eta) {
  if (y_star.size() != jac.rows()) throw ContractError("beta_hat: target length mismatch");
  const auto dec = jacobian_svd(jac);
  const Index r = dec.numerical_rank;
  const VectorXd w = dec.left_basis.leftCols(r) * pinv_gram_coeffs(dec, y_star);
  BetaHat out;
  out.beta = eta * jac.apply_transpose(w);
  out.norm_sq = eta * eta * pinv_norm_sq(dec, y_star);
  return out;
}

BoundTerms bound_terms(const Network& net, const VectorXd& theta, const GateState& gates,
                       const Dataset& data, std::int64_t step, const AlignmentOptions& options) {
  const FactoredJacobian jac = factored_jacobian(net, theta, gates, data.X);
  const VectorXd y = vec_columns(data.Y_ell);
  const auto dec = jacobian_svd(jac);
  BoundTerms t;
  t.step = step;
  t.loss = mean_loss(data.kind, forward(net, theta, gates, data.X), data.Y);
  t.aligned = col_membership(dec, y, options.rel_tol).member;
  t.nu_sq = net.structure_part(theta).squaredNorm();
  t.beta_unit_sq = pinv_norm_sq(dec, y);
  return t;
}

namespace {

std::vector<BoundTerms> aligned_sorted(const std::vector<BoundTerms>& records) {
  std::vector<BoundTerms> out;
  for (const auto& r : records) {
    if (r.aligned) out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const BoundTerms& a, const BoundTerms& b) { return a.step < b.step; });
  return out;
}

BoundReport empty_report(const Dataset& data, double eta, double alpha, double L_used) {
  BoundReport rep;
  rep.eta = eta;
  rep.alpha = alpha;
  rep.L_used = L_used;
  rep.reference = reference_loss(data.kind, data.Y, data.Y_ell, eta);
  return rep;
}

bool bound_inputs_valid(double alpha, double L_used) {
  return alpha > 0.0 && alpha < 1.0 && L_used > 0.0 && std::isfinite(L_used);
}

}  // namespace

std::vector<BoundReport> bound_check_prefixes(const std::vector<BoundTerms>& records,
                                              const Dataset& data, double eta, double alpha,
                                              double L_used) {
  const auto aligned = aligned_sorted(records);
  std::vector<BoundReport> out;
  if (aligned.empty() || !bound_inputs_valid(alpha, L_used)) return out;
  BoundReport rep = empty_report(data, eta, alpha, L_used);
  rep.applicable = true;
  rep.lhs = std::numeric_limits<double>::infinity();
  const double loss_t0 = aligned.front().loss;
  for (const auto& r : aligned) {
    rep.alignment_steps.push_back(r.step);
    rep.lhs = std::min(rep.lhs, r.loss);
    rep.zeta_eta = std::max(rep.zeta_eta, 4.0 * std::max(r.nu_sq, eta * eta * r.beta_unit_sq));
    const double count = static_cast<double>(rep.alignment_steps.size());
    rep.rhs = rep.reference + std::sqrt(L_used * rep.zeta_eta * loss_t0 /
                                        (2.0 * alpha * (1.0 - alpha))) /
                                  std::sqrt(count);
    rep.holds = rep.lhs <= rep.rhs + 1e-9 * (1.0 + std::abs(rep.rhs));
    out.push_back(rep);
  }
  return out;
}

BoundReport bound_check(const std::vector<BoundTerms>& records, const Dataset& data, double eta,
                        double alpha, double L_used) {
  auto all = bound_check_prefixes(records, data, eta, alpha, L_used);
  if (all.empty()) return empty_report(data, eta, alpha, L_used);
  return all.back();
}

double lipschitz_quotient(const VectorXd& theta_a, const VectorXd& grad_a,
                          const VectorXd& theta_b, const VectorXd& grad_b) {
  const double step = (theta_b - theta_a).norm();
  if (step == 0.0) return 0.0;
  return (grad_b - grad_a).norm() / step;
}

KeyInequality key_inequality_check(const Network& net, const VectorXd& theta,
                                   const GateState& gates, const Dataset& data,
                                   const VectorXd& beta) {
  net.check_theta(beta);
  const LossEval ev = loss_and_gradient(net, theta, gates, data.X, data.Y, data.kind);
  const FactoredJacobian jac = factored_jacobian(net, theta, gates, data.X);
  const VectorXd stacked = jac.apply(beta);
  const Index n = data.size();
  MatrixXd q(n, data.Y.cols());
  for (Index j = 0; j < q.cols(); ++j) q.col(j) = stacked.segment(j * n, n);
  KeyInequality out;
  out.lhs = ev.loss;
  out.linearized = mean_loss(data.kind, q, data.Y);
  out.rhs = out.linearized + (net.structure_part(theta) - beta).norm() * ev.grad.norm();
  out.holds = out.lhs <= out.rhs + 1e-8 * (1.0 + std::abs(out.rhs));
  return out;
}

NecessityResult necessity_check(const MatrixXd& outputs, const MatrixXd& y_ell, bool aligned,
                                double tol) {
  if (outputs.rows() != y_ell.rows() || outputs.cols() != y_ell.cols()) {
    throw ContractError("necessity_check: shape mismatch");
  }
  NecessityResult out;
  out.aligned = aligned;
  const double yy = y_ell.squaredNorm();
  if (yy == 0.0) return out;
  out.applicable = true;
  out.eta_star = outputs.cwiseProduct(y_ell).sum() / yy;
  out.rel_residual = (outputs - out.eta_star * y_ell).norm() / std::sqrt(yy);
  out.violation = !aligned && out.rel_residual <= tol;
  return out;
}

NecessityResult necessity_check(const Network& net, const VectorXd& theta, const GateState& gates,
                                const Dataset& data, const AlignmentOptions& options, double tol) {
  const bool aligned = alignment(net, theta, gates, data, options).aligned;
  return necessity_check(forward(net, theta, gates, data.X), data.Y_ell, aligned, tol);
}

}  // namespace gradalign

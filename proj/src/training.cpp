#include "gradalign/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gradalign {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::gd ? "gd" : "sgd"; }

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "gd") return OptimizerKind::gd;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ContractError("unknown optimizer '" + std::string(name) + "'");
}

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::inv_sqrt: return "inv_sqrt";
    case ScheduleKind::square_summable: return "square_summable";
    case ScheduleKind::sequence: return "sequence";
  }
  return "constant";
}

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "constant") return ScheduleKind::constant;
  if (name == "inv_sqrt") return ScheduleKind::inv_sqrt;
  if (name == "square_summable") return ScheduleKind::square_summable;
  if (name == "sequence") return ScheduleKind::sequence;
  throw ContractError("unknown lr schedule '" + std::string(name) + "'");
}

double sgd_exploit_schedule(std::int64_t t, std::int64_t tau, double c) {
  if (t < tau || !(c > 0.0)) throw ContractError("sgd_exploit_schedule: need t >= tau, c > 0");
  return c / std::sqrt(static_cast<double>(t - tau + 1));
}

double square_summable_schedule(std::int64_t t, std::int64_t tau, double c) {
  if (t < tau || !(c > 0.0)) throw ContractError("square_summable_schedule: need t >= tau, c > 0");
  return c / std::pow(static_cast<double>(t - tau + 1), 0.75);
}

double LrSchedule::rate(std::int64_t k) const {
  switch (kind) {
    case ScheduleKind::constant: return base;
    case ScheduleKind::inv_sqrt: return sgd_exploit_schedule(k, 0, base);
    case ScheduleKind::square_summable: return square_summable_schedule(k, 0, base);
    case ScheduleKind::sequence:
      if (values.empty()) throw ContractError("lr sequence is empty");
      return values[static_cast<std::size_t>(
          std::min<std::int64_t>(k, static_cast<std::int64_t>(values.size()) - 1))];
  }
  return base;
}

void OptimizerSpec::validate(Index n, Index depth) const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be >= 0");
  if (batch_size < 0 || batch_size > n) throw ContractError("batch_size must be in [0, n]");
  if (kind == OptimizerKind::gd && effective_batch(n) != n) {
    throw ContractError("gd requires the full batch");
  }
  for (Index l : layer_mask) {
    if (l < 0 || l >= depth) throw ContractError("layer_mask entry out of range");
  }
  if (lr.kind == ScheduleKind::sequence && lr.values.empty()) {
    throw ContractError("lr sequence is empty");
  }
  if (lr.kind != ScheduleKind::sequence && !(lr.base >= 0.0)) throw ContractError("lr must be >= 0");
}

std::vector<IndexRange> masked_ranges(const Network& net, const std::vector<Index>& mask) {
  const auto& layers = net.layout().layers();
  std::vector<IndexRange> out;
  if (mask.empty()) return {IndexRange{0, net.param_count()}};
  std::vector<Index> sorted = mask;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (Index l : sorted) {
    if (l < 0 || l >= static_cast<Index>(layers.size())) throw ContractError("layer mask out of range");
    out.push_back(layers[static_cast<std::size_t>(l)]);
  }
  return out;
}

void optimizer_step(const Network& net, const OptimizerSpec& spec, OptimizerState& state,
                    VectorXd& theta, const VectorXd& grad, double lr, std::int64_t step) {
  net.check_theta(theta);
  if (grad.size() != theta.size()) throw ContractError("optimizer_step: gradient length");
  if (state.velocity.size() != theta.size()) state.velocity = VectorXd::Zero(theta.size());
  for (const auto& r : masked_ranges(net, spec.layer_mask)) {
    auto v = state.velocity.segment(r.begin, r.size());
    auto th = theta.segment(r.begin, r.size());
    v = spec.momentum * v + grad.segment(r.begin, r.size());
    th -= lr * (v + spec.weight_decay * th);
    if (!th.allFinite()) throw DivergenceError(step, "non-finite parameter after update");
  }
  ++state.updates;
}

std::string_view to_string(Phase phase) { return phase == Phase::explore ? "explore" : "exploit"; }

std::string_view to_string(ExploitLrMode mode) {
  return mode == ExploitLrMode::manual ? "manual" : "one_over_lhat";
}

ExploitLrMode parse_exploit_lr_mode(std::string_view name) {
  if (name == "manual") return ExploitLrMode::manual;
  if (name == "one_over_lhat") return ExploitLrMode::one_over_lhat;
  throw ContractError("unknown exploit lr mode '" + std::string(name) + "'");
}

void EEConfig::validate(Index n, Index depth) const {
  if (tau < 1) throw ContractError("tau must be >= 1");
  if (!(epsilon >= 0.0)) throw ContractError("epsilon must be >= 0");
  explore.validate(n, depth);
  exploit.validate(n, depth);
}

// ---------------------------------------------------------------------------
// ExploitCache
// ---------------------------------------------------------------------------
ExploitCache::ExploitCache(const Network& net, const VectorXd& theta_tau, const GateState& gates,
                           const MatrixXd& x)
    : net_(&net) {
  if (!net.gated() || !gates.frozen) throw ContractError("ExploitCache needs frozen gates");
  net.check_gates(gates);
  z_ = head_inputs(net, theta_tau, x);
  const double s = net.spec().gate_sharpness;
  for (const auto& r : gates.R) {
    gates_.push_back((z_ * r.transpose()).unaryExpr([s](double u) { return sigmoid(s * u); }));
  }
}

LossEval ExploitCache::evaluate(const VectorXd& theta, const MatrixXd& y, LossKind kind,
                                const std::vector<Index>& batch) const {
  const auto& net = *net_;
  const auto& layout = net.layout();
  net.check_theta(theta);
  const Index m_y = net.spec().output_dim();
  const bool full = batch.empty();
  const Index rows = full ? z_.rows() : static_cast<Index>(batch.size());
  if (y.rows() != z_.rows()) throw ContractError("ExploitCache: target rows mismatch");

  MatrixXd z(rows, z_.cols());
  MatrixXd yb(rows, y.cols());
  std::vector<MatrixXd> gates(static_cast<std::size_t>(m_y));
  if (full) {
    z = z_;
    yb = y;
    gates = gates_;
  } else {
    for (auto& g : gates) g.resize(rows, gates_.front().cols());
    for (Index r = 0; r < rows; ++r) {
      const Index src = batch[static_cast<std::size_t>(r)];
      if (src < 0 || src >= z_.rows()) throw ContractError("batch index out of range");
      z.row(r) = z_.row(src);
      yb.row(r) = y.row(src);
      for (Index j = 0; j < m_y; ++j) {
        gates[static_cast<std::size_t>(j)].row(r) = gates_[static_cast<std::size_t>(j)].row(src);
      }
    }
  }

  const auto head = block_view(theta, layout.head_block());
  LossEval out;
  out.output.resize(rows, m_y);
  for (Index j = 0; j < m_y; ++j) {
    const MatrixXd act = gates[static_cast<std::size_t>(j)].cwiseProduct(
        z * block_view(theta, layout.hidden_block(j)).transpose());
    out.output.col(j) = act * head.row(j).transpose();
  }
  if (!out.output.allFinite()) throw NumericError("layer " + std::to_string(net.spec().depth()), "output");
  out.loss = mean_loss(kind, out.output, yb);
  const MatrixXd r = loss_grad_rows(kind, out.output, yb) / static_cast<double>(rows);
  out.grad = VectorXd::Zero(theta.size());
  for (Index j = 0; j < m_y; ++j) {
    const MatrixXd delta = (r.col(j) * head.row(j)).cwiseProduct(gates[static_cast<std::size_t>(j)]);
    block_view(out.grad, layout.hidden_block(j)).noalias() = delta.transpose() * z;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------
namespace {

double masked_norm(const VectorXd& v, const std::vector<IndexRange>& ranges) {
  double sq = 0.0;
  for (const auto& r : ranges) sq += v.segment(r.begin, r.size()).squaredNorm();
  return std::sqrt(sq);
}

Index lowest_layer(const Network& net, const std::vector<Index>& mask) {
  if (mask.empty()) return 0;
  (void)net;
  return *std::min_element(mask.begin(), mask.end());
}

class Runner {
 public:
  Runner(const Network& net, const Dataset& data, const TrainOptions& options,
         TrainResult& result)
      : net_(net),
        data_(data),
        options_(options),
        result_(result),
        batching_(options.seed, Stream::batching),
        target_(vec_columns(data.Y_ell)) {}

  // Runs epochs [first, last] of one phase. Records every epoch; updates
  // after every epoch except `last` unless `update_last`.
  void run_phase(Phase phase, const OptimizerSpec& spec, double fixed_lr, std::int64_t first,
                 std::int64_t last, bool update_last, VectorXd& theta, const GateState& gates,
                 const ExploitCache* cache) {
    OptimizerState state;
    state.velocity = VectorXd::Zero(theta.size());
    const auto ranges = masked_ranges(net_, spec.layer_mask);
    const Index min_layer = lowest_layer(net_, spec.layer_mask);
    const Index n = data_.size();
    const Index batch = spec.effective_batch(n);
    VectorXd prev_theta;
    VectorXd prev_grad;
    for (std::int64_t t = first; t <= last; ++t) {
      LossEval ev = cache ? cache->evaluate(theta, data_.Y, data_.kind)
                          : loss_and_gradient(net_, theta, gates, data_.X, data_.Y, data_.kind, {},
                                              min_layer);
      if (!std::isfinite(ev.loss) || ev.loss > options_.divergence_loss) {
        throw DivergenceError(t, "loss " + std::to_string(ev.loss));
      }
      if (prev_grad.size() > 0) {
        const double q = lipschitz_quotient(prev_theta, prev_grad, theta, ev.grad);
        result_.lipschitz_emp = std::max(result_.lipschitz_emp, q);
        double& per_phase =
            phase == Phase::explore ? result_.lipschitz_explore : result_.lipschitz_exploit;
        per_phase = std::max(per_phase, q);
      }
      record(t, phase, theta, gates, ev, ranges);
      if (options_.checkpoint_stride > 0 && options_.on_checkpoint &&
          t % options_.checkpoint_stride == 0) {
        options_.on_checkpoint(t, theta, gates, batching_.state());
      }
      if (t == last && !update_last) break;

      const double lr = fixed_lr > 0.0 ? fixed_lr : spec.lr.rate(state.updates);
      prev_theta = theta;
      prev_grad = ev.grad;
      if (batch == n) {
        optimizer_step(net_, spec, state, theta, ev.grad, lr, t);
      } else {
        std::vector<Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Index{0});
        batching_.shuffle(order);
        for (Index start = 0; start < n; start += batch) {
          const Index stop = std::min(n, start + batch);
          std::vector<Index> rows(order.begin() + start, order.begin() + stop);
          const VectorXd g =
              cache ? cache->evaluate(theta, data_.Y, data_.kind, rows).grad
                    : loss_and_gradient(net_, theta, gates, data_.X, data_.Y, data_.kind, rows,
                                        min_layer)
                          .grad;
          const double rate = fixed_lr > 0.0 ? fixed_lr : spec.lr.rate(state.updates);
          optimizer_step(net_, spec, state, theta, g, rate, t);
        }
      }
    }
  }

  void finish(const VectorXd& theta, const GateState& gates) {
    result_.theta = theta;
    result_.gates = gates;
    result_.rng_state = batching_.state();
  }

 private:
  void record(std::int64_t t, Phase phase, const VectorXd& theta, const GateState& gates,
              const LossEval& ev, const std::vector<IndexRange>& ranges) {
    TraceRecord rec;
    rec.step = t;
    rec.phase = phase;
    rec.loss = ev.loss;
    rec.grad_norm = masked_norm(ev.grad, ranges);
    rec.train_error = error_rate(data_.kind, ev.output, data_.Y);
    rec.q_t = result_.trace.empty() ? 0 : result_.trace.back().q_t;
    if (options_.diag_stride > 0 && t % options_.diag_stride == 0) {
      const FactoredJacobian jac = factored_jacobian(net_, theta, gates, data_.X);
      AlignmentRecord al;
      const auto dec = jacobian_svd(jac);
      if (resolve_method(jac.rows(), jac.cols(), options_.alignment) ==
          MembershipMethod::direct_lsq) {
        const auto mem = col_membership(dec, target_, options_.alignment.rel_tol);
        al.method = MembershipMethod::direct_lsq;
        al.aligned = mem.member;
        al.rel_residual = mem.rel_residual;
        al.rank = dec.numerical_rank;
      } else {
        al = alignment(jac, target_, options_.alignment);
      }
      al.step = t;
      rec.aligned = al.aligned;
      rec.rel_residual = al.rel_residual;
      if (!al.aligned) ++rec.q_t;
      result_.alignment.push_back(al);

      BoundTerms bt;
      bt.step = t;
      bt.loss = ev.loss;
      bt.aligned = al.aligned;
      bt.nu_sq = net_.structure_part(theta).squaredNorm();
      const Index r = dec.numerical_rank;
      const VectorXd c = dec.left_basis.leftCols(r).transpose() * target_;
      bt.beta_unit_sq = (c.array() / dec.singular_values.head(r).array()).square().sum();
      result_.bound_terms.push_back(bt);

      if (options_.record_drift) {
        const MatrixXd m = jac.gram();
        if (gram0_.size() == 0) gram0_ = m;
        rec.drift = drift(gram0_, m);
      }
    }
    result_.trace.push_back(rec);
    if (options_.on_record) options_.on_record(rec);
  }

  const Network& net_;
  const Dataset& data_;
  const TrainOptions& options_;
  TrainResult& result_;
  Rng batching_;
  VectorXd target_;
  MatrixXd gram0_;
};

}  // namespace

TrainResult train_plain(const Network& net, const VectorXd& theta0, const Dataset& data,
                        const OptimizerSpec& optimizer, std::int64_t epochs,
                        const TrainOptions& options) {
  net.check_theta(theta0);
  data.validate();
  optimizer.validate(data.size(), net.spec().depth());
  if (epochs < 0) throw ContractError("epochs must be >= 0");
  TrainResult result;
  result.theta = theta0;
  if (epochs == 0) return result;

  VectorXd theta = theta0;
  const GateState gates;
  Runner runner(net, data, options, result);
  try {
    runner.run_phase(Phase::explore, optimizer, 0.0, 0, epochs, false, theta, gates, nullptr);
  } catch (const DivergenceError& e) {
    result.diverged = true;
    result.divergence = e.what();
  }
  runner.finish(theta, gates);
  return result;
}

TrainResult ee_train(const Network& net, const VectorXd& theta0, const Dataset& data,
                     const EEConfig& ee, std::int64_t epochs_total, const TrainOptions& options) {
  if (!net.gated()) throw ContractError("ee_train: network must have a gated head");
  net.check_theta(theta0);
  data.validate();
  ee.validate(data.size(), net.spec().depth());
  if (epochs_total <= ee.tau) throw ContractError("ee_train: total epochs must exceed tau");

  TrainResult result;
  result.tau = ee.tau;
  VectorXd theta = theta0;
  GateState gates;
  Runner runner(net, data, options, result);
  OptimizerSpec exploit = ee.exploit;
  exploit.layer_mask = {net.spec().depth() - 2};
  // Exploration produces theta^1 .. theta^{tau-1}; theta^tau is then set from
  // theta^{tau-1} by the perturbation.
  try {
    runner.run_phase(Phase::explore, ee.explore, 0.0, 0, ee.tau - 1, false, theta, gates,
                     nullptr);

    Rng perturb(options.seed, Stream::perturbation);
    for (Index k = 0; k < theta.size(); ++k) theta(k) += ee.epsilon * perturb.normal();
    gates = net.freeze_gates(theta);

    const ExploitCache cache(net, theta, gates, data.X);
    double fixed_lr = 0.0;
    if (ee.exploit_lr_mode == ExploitLrMode::one_over_lhat) {
      result.lhat = lhat(net, theta, gates, data.X, data.kind).lhat;
      if (!(result.lhat > 0.0)) throw ContractError("ee_train: L_hat is zero");
      fixed_lr = 1.0 / result.lhat;
    }
    result.exploit_lr = fixed_lr > 0.0 ? fixed_lr : exploit.lr.rate(0);
    runner.run_phase(Phase::exploit, exploit, fixed_lr, ee.tau, epochs_total, false, theta, gates,
                     &cache);
  } catch (const DivergenceError& e) {
    result.diverged = true;
    result.divergence = e.what();
  }
  runner.finish(theta, gates);
  return result;
}

}  // namespace gradalign

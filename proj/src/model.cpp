#include "gradalign/model.hpp"

#include <cmath>
#include <map>
#include <numeric>

namespace gradalign {

std::string_view to_string(HeadMode mode) {
  return mode == HeadMode::plain ? "plain" : "gated";
}

HeadMode parse_head_mode(std::string_view name) {
  if (name == "plain") return HeadMode::plain;
  if (name == "gated") return HeadMode::gated;
  throw ContractError("unknown head mode '" + std::string(name) + "'");
}

void NetworkSpec::validate() const {
  if (layer_widths.size() < 3) {
    throw ContractError("network needs at least two trainable layers");
  }
  for (Index w : layer_widths) {
    if (w < 1) throw ContractError("layer widths must be >= 1");
  }
  if (!(softplus_sharpness > 0.0)) throw ContractError("softplus sharpness must be > 0");
  if (head_mode == HeadMode::gated && !(gate_sharpness > 0.0)) {
    throw ContractError("gate sharpness must be > 0");
  }
  if (init_width < 0.0) throw ContractError("init_width must be >= 0");
}

NetworkSpec to_gated(NetworkSpec base, double gate_sharpness) {
  base.head_mode = HeadMode::gated;
  base.gate_sharpness = gate_sharpness;
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// ParamLayout
// ---------------------------------------------------------------------------
ParamLayout::ParamLayout(const NetworkSpec& spec) {
  spec.validate();
  const auto& w = spec.layer_widths;
  const Index depth = spec.depth();
  gated_ = spec.head_mode == HeadMode::gated;
  outputs_ = spec.output_dim();

  Index offset = 0;
  auto push = [&](Index rows, Index cols, Index layer) {
    blocks_.push_back({offset, rows, cols, layer});
    offset += rows * cols;
  };

  const Index lower_layers = gated_ ? depth - 2 : depth;
  for (Index l = 0; l < lower_layers; ++l) {
    const Index begin = offset;
    push(w[static_cast<std::size_t>(l + 1)], w[static_cast<std::size_t>(l)] + 1, l);
    layers_.push_back({begin, offset});
  }
  lower_blocks_ = lower_layers;
  if (gated_) {
    const Index m_h = spec.head_width();
    const Index m_h1 = spec.gate_input_dim();
    Index begin = offset;
    for (Index j = 0; j < outputs_; ++j) push(m_h, m_h1, depth - 2);
    layers_.push_back({begin, offset});
    begin = offset;
    push(outputs_, m_h, depth - 1);
    layers_.push_back({begin, offset});
  }
  size_ = offset;
}

const ParamBlock& ParamLayout::hidden_block(Index j) const {
  if (!gated_ || j < 0 || j >= outputs_) throw ContractError("hidden_block: invalid output");
  return blocks_[static_cast<std::size_t>(lower_blocks_ + j)];
}

IndexRange ParamLayout::head_row(Index j) const {
  if (!gated_ || j < 0 || j >= outputs_) throw ContractError("head_row: invalid output");
  const auto& head = head_block();
  return {head.offset + j * head.cols, head.offset + (j + 1) * head.cols};
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------
Network::Network(NetworkSpec spec) : spec_(std::move(spec)), layout_(spec_) {}

VectorXd Network::init_params(Rng& rng) const {
  VectorXd theta(layout_.size());
  for (const auto& block : layout_.blocks()) {
    const bool has_bias_column = block.layer < spec_.depth() - 1 || !gated();
    const Index fan_in = has_bias_column ? block.cols - 1 : block.cols;
    const double std_dev =
        spec_.init_width > 0.0 ? 1.0 / std::sqrt(spec_.init_width)
                               : 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1)));
    for (Index k = block.offset; k < block.offset + block.size(); ++k) {
      theta(k) = std_dev * rng.normal();
    }
  }
  return theta;
}

GateState Network::freeze_gates(const VectorXd& theta) const {
  if (!gated()) throw ContractError("freeze_gates: network has no gated head");
  check_theta(theta);
  GateState gates;
  gates.frozen = true;
  for (Index j = 0; j < spec_.output_dim(); ++j) {
    gates.R.emplace_back(block_view(theta, layout_.hidden_block(j)));
  }
  return gates;
}

VectorXd Network::structure_part(const VectorXd& theta) const {
  check_theta(theta);
  VectorXd nu = VectorXd::Zero(theta.size());
  const auto s = layout_.structure_set();
  nu.segment(s.begin, s.size()) = theta.segment(s.begin, s.size());
  return nu;
}

void Network::check_theta(const VectorXd& theta) const {
  if (theta.size() != layout_.size()) {
    throw ContractError("theta has length " + std::to_string(theta.size()) + ", expected " +
                        std::to_string(layout_.size()));
  }
}

void Network::check_gates(const GateState& gates) const {
  if (!gates.frozen) return;
  if (!gated()) throw ContractError("frozen gates on a plain network");
  if (static_cast<Index>(gates.R.size()) != spec_.output_dim()) {
    throw ContractError("gate state has wrong number of outputs");
  }
  for (const auto& r : gates.R) {
    if (r.rows() != spec_.head_width() || r.cols() != spec_.gate_input_dim()) {
      throw ContractError("gate matrix has wrong shape");
    }
  }
}

VectorXd vectorize(const Network& net, const std::vector<MatrixXd>& blocks) {
  const auto& layout = net.layout();
  if (blocks.size() != layout.blocks().size()) throw ContractError("vectorize: block count");
  VectorXd theta(layout.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& spec = layout.blocks()[b];
    if (blocks[b].rows() != spec.rows || blocks[b].cols() != spec.cols) {
      throw ContractError("vectorize: block " + std::to_string(b) + " has wrong shape");
    }
    block_view(theta, spec) = blocks[b];
  }
  return theta;
}

std::vector<MatrixXd> devectorize(const Network& net, const VectorXd& theta) {
  net.check_theta(theta);
  std::vector<MatrixXd> blocks;
  for (const auto& b : net.layout().blocks()) blocks.emplace_back(block_view(theta, b));
  return blocks;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------
double softplus(double u, double sharpness) { return log1p_exp(sharpness * u) / sharpness; }

MatrixXd softplus(const MatrixXd& u, double sharpness) {
  return u.unaryExpr([sharpness](double v) { return softplus(v, sharpness); });
}

namespace {

MatrixXd sigmoid_of_scaled(const MatrixXd& u, double sharpness) {
  return u.unaryExpr([sharpness](double v) { return sigmoid(sharpness * v); });
}

MatrixXd append_ones(const MatrixXd& a) {
  MatrixXd out(a.rows(), a.cols() + 1);
  out.leftCols(a.cols()) = a;
  out.col(a.cols()).setOnes();
  return out;
}

void check_finite(const MatrixXd& m, Index layer, const char* what) {
  if (!m.allFinite()) throw NumericError("layer " + std::to_string(layer + 1), what);
}

}  // namespace

ForwardCache forward_cache(const Network& net, const VectorXd& theta, const GateState& gates,
                           const MatrixXd& x) {
  net.check_theta(theta);
  net.check_gates(gates);
  const auto& spec = net.spec();
  const auto& layout = net.layout();
  if (x.cols() != spec.input_dim()) {
    throw ContractError("forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                        std::to_string(spec.input_dim()));
  }
  require_finite(x, "forward input");

  ForwardCache cache;
  MatrixXd a = x;
  const Index lower = layout.lower_block_count();
  for (Index l = 0; l < lower; ++l) {
    const auto& block = layout.blocks()[static_cast<std::size_t>(l)];
    cache.inputs.push_back(append_ones(a));
    MatrixXd u = cache.inputs.back() * block_view(theta, block).transpose();
    check_finite(u, l, "pre-activation");
    const bool last_plain = !net.gated() && l == lower - 1;
    if (last_plain) {
      cache.output = std::move(u);
      return cache;
    }
    cache.slopes.push_back(sigmoid_of_scaled(u, spec.softplus_sharpness));
    a = softplus(u, spec.softplus_sharpness);
  }

  // Gated head.
  const Index head_layer = spec.depth() - 2;
  cache.z = append_ones(a);
  const auto head = block_view(theta, layout.head_block());
  cache.output.resize(x.rows(), spec.output_dim());
  for (Index j = 0; j < spec.output_dim(); ++j) {
    const auto w = block_view(theta, layout.hidden_block(j));
    MatrixXd pre = cache.z * w.transpose();
    MatrixXd gate_arg = gates.frozen ? MatrixXd(cache.z * gates.R[static_cast<std::size_t>(j)].transpose())
                                     : pre;
    MatrixXd gate = sigmoid_of_scaled(gate_arg, spec.gate_sharpness);
    MatrixXd act = gate.cwiseProduct(pre);
    check_finite(act, head_layer, "gated activation");
    cache.output.col(j) = act * head.row(j).transpose();
    cache.pre.push_back(std::move(pre));
    cache.gate.push_back(std::move(gate));
    cache.act.push_back(std::move(act));
  }
  check_finite(cache.output, head_layer + 1, "output");
  return cache;
}

MatrixXd forward(const Network& net, const VectorXd& theta, const GateState& gates,
                 const MatrixXd& x) {
  return forward_cache(net, theta, gates, x).output;
}

void backward(const Network& net, const VectorXd& theta, const GateState& gates,
              const ForwardCache& cache, const MatrixXd& output_grad, const BlockVisitor& visit,
              Index min_layer) {
  const auto& spec = net.spec();
  const auto& layout = net.layout();
  const Index depth = spec.depth();
  if (output_grad.rows() != cache.output.rows() || output_grad.cols() != spec.output_dim()) {
    throw ContractError("backward: seed shape mismatch");
  }

  MatrixXd grad_a;  // dL/d(activation feeding the current lower layer)
  Index next_lower = layout.lower_block_count() - 1;

  if (!net.gated()) {
    visit(next_lower, output_grad, cache.inputs.back());
    if (next_lower <= min_layer) return;
    const auto& top = layout.blocks()[static_cast<std::size_t>(next_lower)];
    grad_a = output_grad * block_view(theta, top).leftCols(top.cols - 1);
    --next_lower;
  } else {
    const Index m_y = spec.output_dim();
    const Index head_block_index = static_cast<Index>(layout.blocks().size()) - 1;
    const auto head = block_view(theta, layout.head_block());
    const bool need_hidden = min_layer <= depth - 2;
    const bool need_lower = min_layer < depth - 2;
    MatrixXd grad_z;
    if (need_lower) grad_z = MatrixXd::Zero(cache.z.rows(), cache.z.cols());
    for (Index j = 0; j < m_y; ++j) {
      const auto seed = output_grad.col(j);
      if (seed.isZero(0.0)) continue;
      const auto& act = cache.act[static_cast<std::size_t>(j)];
      MatrixXd head_delta = MatrixXd::Zero(seed.size(), m_y);
      head_delta.col(j) = seed;
      visit(head_block_index, head_delta, act);
      if (!need_hidden) continue;

      const auto& gate = cache.gate[static_cast<std::size_t>(j)];
      MatrixXd local = gate;
      if (!gates.frozen) {
        const auto& pre = cache.pre[static_cast<std::size_t>(j)];
        local.array() += spec.gate_sharpness * gate.array() * (1.0 - gate.array()) * pre.array();
      }
      MatrixXd delta = (seed * head.row(j)).cwiseProduct(local);
      visit(layout.lower_block_count() + j, delta, cache.z);
      if (need_lower) {
        grad_z.noalias() += delta * block_view(theta, layout.hidden_block(j));
        if (gates.frozen) {
          // The frozen gate still reads z: d gate(R z) / dz feeds the lower layers.
          const auto& pre = cache.pre[static_cast<std::size_t>(j)];
          const MatrixXd gate_delta =
              (seed * head.row(j))
                  .cwiseProduct(MatrixXd(spec.gate_sharpness * gate.array() *
                                         (1.0 - gate.array()) * pre.array()));
          grad_z.noalias() += gate_delta * gates.R[static_cast<std::size_t>(j)];
        }
      }
    }
    if (!need_lower) return;
    grad_a = grad_z.leftCols(grad_z.cols() - 1);
  }

  for (Index l = next_lower; l >= min_layer && l >= 0; --l) {
    const MatrixXd delta = grad_a.cwiseProduct(cache.slopes[static_cast<std::size_t>(l)]);
    visit(l, delta, cache.inputs[static_cast<std::size_t>(l)]);
    if (l == min_layer || l == 0) break;
    const auto& block = layout.blocks()[static_cast<std::size_t>(l)];
    grad_a = delta * block_view(theta, block).leftCols(block.cols - 1);
  }
}

namespace {

MatrixXd select_rows(const MatrixXd& m, const std::vector<Index>& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index src = rows[r];
    if (src < 0 || src >= m.rows()) throw ContractError("batch index out of range");
    out.row(static_cast<Index>(r)) = m.row(src);
  }
  return out;
}

}  // namespace

LossEval loss_and_gradient(const Network& net, const VectorXd& theta, const GateState& gates,
                           const MatrixXd& x, const MatrixXd& y, LossKind kind,
                           const std::vector<Index>& batch, Index min_layer) {
  if (x.rows() != y.rows()) throw ContractError("loss_and_gradient: X/Y row mismatch");
  const bool full = batch.empty();
  const MatrixXd xb = full ? x : select_rows(x, batch);
  const MatrixXd yb = full ? y : select_rows(y, batch);
  if (xb.rows() == 0) throw ContractError("loss_and_gradient: empty batch");

  LossEval out;
  ForwardCache cache = forward_cache(net, theta, gates, xb);
  out.loss = mean_loss(kind, cache.output, yb);
  const MatrixXd seed = loss_grad_rows(kind, cache.output, yb) / static_cast<double>(xb.rows());
  out.grad = VectorXd::Zero(theta.size());
  const auto& blocks = net.layout().blocks();
  backward(
      net, theta, gates, cache, seed,
      [&](Index b, const MatrixXd& delta, const MatrixXd& input) {
        block_view(out.grad, blocks[static_cast<std::size_t>(b)]).noalias() +=
            delta.transpose() * input;
      },
      min_layer);
  out.output = std::move(cache.output);
  return out;
}

VectorXd loss_gradient(const Network& net, const VectorXd& theta, const GateState& gates,
                       const MatrixXd& x, const MatrixXd& y, LossKind kind,
                       const std::vector<Index>& batch) {
  return loss_and_gradient(net, theta, gates, x, y, kind, batch).grad;
}

double loss(const Network& net, const VectorXd& theta, const GateState& gates, const MatrixXd& x,
            const MatrixXd& y, LossKind kind) {
  return mean_loss(kind, forward(net, theta, gates, x), y);
}

// ---------------------------------------------------------------------------
// Jacobian
// ---------------------------------------------------------------------------
FactoredJacobian::FactoredJacobian(const ParamLayout& layout, Index samples, Index outputs,
                                   std::vector<JacobianFactor> factors)
    : blocks_(layout.blocks()),
      samples_(samples),
      outputs_(outputs),
      params_(layout.size()),
      factors_(std::move(factors)) {}

MatrixXd FactoredJacobian::materialize(Index cap) const {
  if (rows() > 0 && cols() > cap / rows()) {
    throw SizeError("Jacobian of " + std::to_string(rows()) + "x" + std::to_string(cols()) +
                    " exceeds the materialization cap of " + std::to_string(cap) + " entries");
  }
  MatrixXd j = MatrixXd::Zero(rows(), cols());
  for (const auto& f : factors_) {
    const auto& b = blocks_[static_cast<std::size_t>(f.block)];
    for (Index i = 0; i < samples_; ++i) {
      const Index row = f.output * samples_ + i;
      for (Index o = 0; o < b.rows; ++o) {
        const double d = f.delta(i, o);
        if (d == 0.0) continue;
        j.row(row).segment(b.offset + o * b.cols, b.cols) += d * f.input.row(i);
      }
    }
  }
  return j;
}

VectorXd FactoredJacobian::apply(const VectorXd& v) const {
  if (v.size() != params_) throw ContractError("FactoredJacobian::apply: length mismatch");
  VectorXd out = VectorXd::Zero(rows());
  for (const auto& f : factors_) {
    const auto& b = blocks_[static_cast<std::size_t>(f.block)];
    const ConstBlockMap w(v.data() + b.offset, b.rows, b.cols);
    const MatrixXd projected = f.input * w.transpose();
    out.segment(f.output * samples_, samples_) += projected.cwiseProduct(f.delta).rowwise().sum();
  }
  return out;
}

VectorXd FactoredJacobian::apply_transpose(const VectorXd& w) const {
  if (w.size() != rows()) throw ContractError("FactoredJacobian::apply_transpose: length");
  VectorXd out = VectorXd::Zero(params_);
  for (const auto& f : factors_) {
    const auto& b = blocks_[static_cast<std::size_t>(f.block)];
    const VectorXd weights = w.segment(f.output * samples_, samples_);
    const MatrixXd scaled = f.delta.array().colwise() * weights.array();
    BlockMap(out.data() + b.offset, b.rows, b.cols).noalias() += scaled.transpose() * f.input;
  }
  return out;
}

MatrixXd FactoredJacobian::gram() const {
  MatrixXd m = MatrixXd::Zero(rows(), rows());
  std::map<Index, std::vector<const JacobianFactor*>> by_block;
  for (const auto& f : factors_) by_block[f.block].push_back(&f);
  for (const auto& [block, list] : by_block) {
    for (std::size_t a = 0; a < list.size(); ++a) {
      for (std::size_t b = a; b < list.size(); ++b) {
        const auto& fa = *list[a];
        const auto& fb = *list[b];
        const MatrixXd dd = fa.delta * fb.delta.transpose();
        if (dd.isZero(0.0)) continue;
        const MatrixXd contrib = dd.cwiseProduct(fa.input * fb.input.transpose());
        m.block(fa.output * samples_, fb.output * samples_, samples_, samples_) += contrib;
        if (fa.output != fb.output) {
          m.block(fb.output * samples_, fa.output * samples_, samples_, samples_) +=
              contrib.transpose();
        }
      }
    }
  }
  return 0.5 * (m + m.transpose());
}

namespace {

// m = out * Q^T with Q orthonormal columns; out has min(m.rows, m.cols) columns.
MatrixXd reduce_columns(const MatrixXd& m) {
  if (m.cols() <= m.rows()) return m;
  const Eigen::MatrixXd mt = m.transpose();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(mt);
  const Eigen::MatrixXd r =
      qr.matrixQR().topRows(m.rows()).triangularView<Eigen::Upper>();
  return r.transpose();
}

}  // namespace

MatrixXd FactoredJacobian::compressed() const {
  const Index n_rows = rows();
  std::map<Index, std::vector<const JacobianFactor*>> by_block;
  for (const auto& f : factors_) by_block[f.block].push_back(&f);

  std::vector<MatrixXd> pieces;
  Index total = 0;
  for (const auto& [block, list] : by_block) {
    const auto& b = blocks_[static_cast<std::size_t>(block)];
    MatrixXd delta = MatrixXd::Zero(n_rows, b.rows);
    MatrixXd input = MatrixXd::Zero(n_rows, b.cols);
    for (const auto* f : list) {
      delta.middleRows(f->output * samples_, samples_) = f->delta;
      input.middleRows(f->output * samples_, samples_) = f->input;
    }
    MatrixXd dr = reduce_columns(delta);
    MatrixXd ar = reduce_columns(input);
    MatrixXd expanded(n_rows, dr.cols() * ar.cols());
    for (Index i = 0; i < n_rows; ++i) {
      for (Index o = 0; o < dr.cols(); ++o) {
        expanded.row(i).segment(o * ar.cols(), ar.cols()) = dr(i, o) * ar.row(i);
      }
    }
    pieces.push_back(reduce_columns(expanded));
    total += pieces.back().cols();
  }
  MatrixXd stacked(n_rows, total);
  Index col = 0;
  for (const auto& p : pieces) {
    stacked.middleCols(col, p.cols()) = p;
    col += p.cols();
  }
  return reduce_columns(stacked);
}

FactoredJacobian factored_jacobian(const Network& net, const VectorXd& theta,
                                   const GateState& gates, const MatrixXd& x) {
  const ForwardCache cache = forward_cache(net, theta, gates, x);
  const Index n = x.rows();
  const Index m_y = net.spec().output_dim();
  std::vector<JacobianFactor> factors;
  for (Index j = 0; j < m_y; ++j) {
    MatrixXd seed = MatrixXd::Zero(n, m_y);
    seed.col(j).setOnes();
    backward(net, theta, gates, cache, seed,
             [&](Index b, const MatrixXd& delta, const MatrixXd& input) {
               factors.push_back({b, j, delta, input});
             });
  }
  return FactoredJacobian(net.layout(), n, m_y, std::move(factors));
}

MatrixXd jacobian(const Network& net, const VectorXd& theta, const GateState& gates,
                  const MatrixXd& x, Index cap) {
  const Index rows = x.rows() * net.spec().output_dim();
  if (rows > 0 && net.param_count() > cap / rows) {
    throw SizeError("Jacobian of " + std::to_string(rows) + "x" +
                    std::to_string(net.param_count()) + " exceeds the materialization cap");
  }
  return factored_jacobian(net, theta, gates, x).materialize(cap);
}

VectorXd vec_columns(const MatrixXd& m) {
  VectorXd out(m.size());
  for (Index j = 0; j < m.cols(); ++j) out.segment(j * m.rows(), m.rows()) = m.col(j);
  return out;
}

MatrixXd common_structure_reconstruct(const Network& net, const VectorXd& theta,
                                      const GateState& gates, const MatrixXd& x) {
  const FactoredJacobian jac = factored_jacobian(net, theta, gates, x);
  const VectorXd stacked = jac.apply(net.structure_part(theta));
  MatrixXd out(x.rows(), net.spec().output_dim());
  for (Index j = 0; j < out.cols(); ++j) out.col(j) = stacked.segment(j * x.rows(), x.rows());
  return out;
}

}  // namespace gradalign

#pragma once

// Dense networks with softplus hidden layers and pre-activation outputs.
//
// plain:  f(x) = W_H [h_{H-1}(x); 1],  h_l = softplus([h_{l-1}; 1] W_l^T)
// gated:  z = [h_{H-2}(x); 1],
//         f(x)_j = W^(H)_{j*} ( gate(G_j z) o (W^(H-1,j) z) ),
//         gate(u) = 1 / (1 + exp(-s' u)),  G_j = W^(H-1,j) until frozen, R^(j) after.
//
// Parameter layout. theta is the concatenation of dense blocks, each stored
// row-major (out x in):
//   plain: one block per layer, [W | b] (bias is the last column);
//   gated: lower blocks [W | b] for layers 1..H-2, then one m_H x m_{H-1}
//          block W^(H-1,j) per output j (the rows of W concatenated, i.e.
//          vec(W^T)), then the m_y x m_H head W^(H).
// The structure set S is the last layer's range in both modes.

#include "gradalign/linalg.hpp"
#include "gradalign/losses.hpp"
#include "gradalign/rng.hpp"

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gradalign {

enum class HeadMode { plain, gated };

std::string_view to_string(HeadMode mode);
HeadMode parse_head_mode(std::string_view name);

struct NetworkSpec {
  std::vector<Index> layer_widths;  // m_x, hidden widths..., m_y
  HeadMode head_mode = HeadMode::plain;
  double softplus_sharpness = 100.0;
  double gate_sharpness = 1000.0;
  /// > 0: every weight entry ~ N(0, 1/init_width). 0: N(0, 1/fan_in).
  double init_width = 0.0;

  void validate() const;

  Index depth() const { return static_cast<Index>(layer_widths.size()) - 1; }
  Index input_dim() const { return layer_widths.front(); }
  Index output_dim() const { return layer_widths.back(); }
  /// m_{H-1}: width of z including the constant neuron (gated).
  Index gate_input_dim() const { return layer_widths[layer_widths.size() - 3] + 1; }
  /// m_H: width of the gated hidden layer.
  Index head_width() const { return layer_widths[layer_widths.size() - 2]; }
};

/// The wrapper's model modification: same widths, gated last two layers.
NetworkSpec to_gated(NetworkSpec base, double gate_sharpness);

struct IndexRange {
  Index begin = 0;
  Index end = 0;
  Index size() const { return end - begin; }
  bool contains(Index k) const { return k >= begin && k < end; }
};

struct ParamBlock {
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  Index layer = 0;  // 0-based layer index
  Index size() const { return rows * cols; }
  IndexRange range() const { return {offset, offset + size()}; }
};

class ParamLayout {
 public:
  explicit ParamLayout(const NetworkSpec& spec);

  Index size() const { return size_; }
  Index depth() const { return static_cast<Index>(layers_.size()); }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const std::vector<IndexRange>& layers() const { return layers_; }
  IndexRange layer(Index l) const { return layers_.at(static_cast<std::size_t>(l)); }
  IndexRange structure_set() const { return layers_.back(); }

  // Lower (plain-style) blocks: all blocks in plain mode, layers 1..H-2 in gated mode.
  Index lower_block_count() const { return lower_blocks_; }

  // Gated mode only.
  const ParamBlock& hidden_block(Index j) const;
  const ParamBlock& head_block() const { return blocks_.back(); }
  /// theta_(H,j) = (W^(H)_{j*})^T.
  IndexRange head_row(Index j) const;
  bool gated() const { return gated_; }

 private:
  std::vector<ParamBlock> blocks_;
  std::vector<IndexRange> layers_;
  Index size_ = 0;
  Index lower_blocks_ = 0;
  Index outputs_ = 0;
  bool gated_ = false;
};

using ConstBlockMap = Eigen::Map<const MatrixXd>;
using BlockMap = Eigen::Map<MatrixXd>;

inline ConstBlockMap block_view(const VectorXd& theta, const ParamBlock& b) {
  return ConstBlockMap(theta.data() + b.offset, b.rows, b.cols);
}
inline BlockMap block_view(VectorXd& theta, const ParamBlock& b) {
  return BlockMap(theta.data() + b.offset, b.rows, b.cols);
}

struct GateState {
  bool frozen = false;
  std::vector<MatrixXd> R;  // per output j, m_H x m_{H-1}
};

class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return layout_; }
  Index param_count() const { return layout_.size(); }
  bool gated() const { return spec_.head_mode == HeadMode::gated; }

  /// Every entry of every block, bias column included, ~ N(0, std^2) with
  /// std from NetworkSpec::init_width.
  VectorXd init_params(Rng& rng) const;

  /// R^(j) = W^(H-1,j) at theta.
  GateState freeze_gates(const VectorXd& theta) const;

  /// nu(theta): theta on S, zero elsewhere.
  VectorXd structure_part(const VectorXd& theta) const;

  void check_theta(const VectorXd& theta) const;
  void check_gates(const GateState& gates) const;

 private:
  NetworkSpec spec_;
  ParamLayout layout_;
};

// ---------------------------------------------------------------------------
// Parameter (de)vectorization: one matrix per block, in block order.
// ---------------------------------------------------------------------------
VectorXd vectorize(const Network& net, const std::vector<MatrixXd>& blocks);
std::vector<MatrixXd> devectorize(const Network& net, const VectorXd& theta);

double softplus(double u, double sharpness);
MatrixXd softplus(const MatrixXd& u, double sharpness);

// ---------------------------------------------------------------------------
// Forward / backward.
// ---------------------------------------------------------------------------
struct ForwardCache {
  std::vector<MatrixXd> inputs;  // [a, 1] feeding each lower block
  std::vector<MatrixXd> slopes;  // softplus'(u) of each softplus layer
  MatrixXd z;                    // gated: [h_{H-2}, 1]
  std::vector<MatrixXd> pre;     // gated: W^(H-1,j) z per output
  std::vector<MatrixXd> gate;    // gated: gate(G_j z) per output
  std::vector<MatrixXd> act;     // gated: gate o pre per output
  MatrixXd output;               // n x m_y
};

ForwardCache forward_cache(const Network& net, const VectorXd& theta, const GateState& gates,
                           const MatrixXd& x);

MatrixXd forward(const Network& net, const VectorXd& theta, const GateState& gates,
                 const MatrixXd& x);

/// Receives, per dense block touched, a pair (delta, input) whose product
/// delta^T input is that block's (row-major) contribution to the gradient;
/// row i of both belongs to sample i.
using BlockVisitor =
    std::function<void(Index block, const MatrixXd& delta, const MatrixXd& input)>;

/// Reverse pass seeded with dL/df (n x m_y). Blocks of layers below
/// `min_layer` are not visited.
void backward(const Network& net, const VectorXd& theta, const GateState& gates,
              const ForwardCache& cache, const MatrixXd& output_grad, const BlockVisitor& visit,
              Index min_layer = 0);

struct LossEval {
  double loss = 0.0;
  VectorXd grad;
  MatrixXd output;
};

/// Mean loss over `batch` (all rows when empty) and its gradient w.r.t. theta.
LossEval loss_and_gradient(const Network& net, const VectorXd& theta, const GateState& gates,
                           const MatrixXd& x, const MatrixXd& y, LossKind kind,
                           const std::vector<Index>& batch = {}, Index min_layer = 0);

VectorXd loss_gradient(const Network& net, const VectorXd& theta, const GateState& gates,
                       const MatrixXd& x, const MatrixXd& y, LossKind kind,
                       const std::vector<Index>& batch = {});

double loss(const Network& net, const VectorXd& theta, const GateState& gates, const MatrixXd& x,
            const MatrixXd& y, LossKind kind);

// ---------------------------------------------------------------------------
// Output Jacobian d vec(f_X) / d theta, row j*n + i.
// ---------------------------------------------------------------------------
inline constexpr Index kDefaultJacobianCap = Index{1} << 28;

struct JacobianFactor {
  Index block = 0;
  Index output = 0;
  MatrixXd delta;  // n x block.rows
  MatrixXd input;  // n x block.cols
};

/// Per-sample, per-output rows kept as outer products delta_i input_i^T per
/// block, so products with J and the Gram matrix J J^T never need the dense
/// (n m_y) x d matrix.
class FactoredJacobian {
 public:
  FactoredJacobian(const ParamLayout& layout, Index samples, Index outputs,
                   std::vector<JacobianFactor> factors);

  Index rows() const { return samples_ * outputs_; }
  Index cols() const { return params_; }
  Index samples() const { return samples_; }
  Index outputs() const { return outputs_; }
  const std::vector<JacobianFactor>& factors() const { return factors_; }

  MatrixXd materialize(Index cap = kDefaultJacobianCap) const;
  VectorXd apply(const VectorXd& v) const;
  VectorXd apply_transpose(const VectorXd& w) const;
  /// J J^T, symmetrized.
  MatrixXd gram() const;
  /// L (rows x at most rows) with J = L Q^T for some Q with orthonormal
  /// columns: same column space and singular values as J. Each block's rows
  /// are Kronecker products delta_i (x) input_i, so both factors are
  /// QR-reduced to at most `rows` columns before the block is expanded.
  MatrixXd compressed() const;

 private:
  std::vector<ParamBlock> blocks_;
  Index samples_ = 0;
  Index outputs_ = 0;
  Index params_ = 0;
  std::vector<JacobianFactor> factors_;
};

FactoredJacobian factored_jacobian(const Network& net, const VectorXd& theta,
                                   const GateState& gates, const MatrixXd& x);

MatrixXd jacobian(const Network& net, const VectorXd& theta, const GateState& gates,
                  const MatrixXd& x, Index cap = kDefaultJacobianCap);

/// sum_{k in S} theta_k df(x_i)/dtheta_k for every row of x (n x m_y).
MatrixXd common_structure_reconstruct(const Network& net, const VectorXd& theta,
                                      const GateState& gates, const MatrixXd& x);

/// f_X as vec (column-stacked), index j*n + i.
VectorXd vec_columns(const MatrixXd& m);

}  // namespace gradalign

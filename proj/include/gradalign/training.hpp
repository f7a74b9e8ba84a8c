#pragma once

// Momentum SGD / full-batch GD with layer masks and learning-rate schedules,
// plain training runs, and the exploration-exploitation wrapper:
//   explore all layers for t < tau, perturb theta^tau = theta^{tau-1} + eps * delta
//   with delta ~ N(0, I_d), freeze the head gates at theta^tau, then train
//   theta_(H-1) only.
// The outer loop counts epochs; the trace holds one record per epoch for the
// iterate before that epoch's update, plus the final iterate.

#include "gradalign/data.hpp"
#include "gradalign/diagnostics.hpp"
#include "gradalign/model.hpp"
#include "gradalign/rng.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gradalign {

enum class OptimizerKind { gd, sgd };
enum class ScheduleKind { constant, inv_sqrt, square_summable, sequence };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view name);

/// c / sqrt(t - tau + 1).
double sgd_exploit_schedule(std::int64_t t, std::int64_t tau, double c);
/// c / (t - tau + 1)^0.75: square-summable, not summable.
double square_summable_schedule(std::int64_t t, std::int64_t tau, double c);

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::constant;
  double base = 0.1;
  std::vector<double> values;  // sequence: one rate per update, last one held

  /// Rate for the k-th update of a phase (k >= 0).
  double rate(std::int64_t k) const;
};

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::sgd;
  LrSchedule lr;
  double momentum = 0.0;
  double weight_decay = 0.0;
  Index batch_size = 0;          // 0: full batch
  std::vector<Index> layer_mask; // 0-based layers; empty: all layers

  void validate(Index n, Index depth) const;
  Index effective_batch(Index n) const { return batch_size == 0 ? n : batch_size; }
};

struct OptimizerState {
  VectorXd velocity;
  std::int64_t updates = 0;
};

/// Parameter indices updated under `mask` (all layers when empty).
std::vector<IndexRange> masked_ranges(const Network& net, const std::vector<Index>& mask);

/// v <- mu v + g; theta <- theta - lr (v + lambda theta) on masked coordinates.
void optimizer_step(const Network& net, const OptimizerSpec& spec, OptimizerState& state,
                    VectorXd& theta, const VectorXd& grad, double lr, std::int64_t step);

enum class Phase { explore, exploit };
std::string_view to_string(Phase phase);

struct TraceRecord {
  std::int64_t step = 0;
  Phase phase = Phase::explore;
  double loss = 0.0;
  double grad_norm = 0.0;  // gradient restricted to the phase's trainable coordinates
  double train_error = 0.0;
  std::optional<bool> aligned;
  std::optional<double> rel_residual;
  std::int64_t q_t = 0;
  std::optional<double> drift;
};

using TrainTrace = std::vector<TraceRecord>;

struct TrainOptions {
  Index diag_stride = 0;  // 0 disables alignment / bound / drift sampling
  AlignmentOptions alignment;
  bool record_drift = false;
  std::uint64_t seed = 0;  // batching and perturbation streams
  double divergence_loss = 1e12;
  Index checkpoint_stride = 0;
  std::function<void(std::int64_t step, const VectorXd& theta, const GateState& gates,
                     const std::string& rng_state)>
      on_checkpoint;
  std::function<void(const TraceRecord&)> on_record;
};

enum class ExploitLrMode { manual, one_over_lhat };
std::string_view to_string(ExploitLrMode mode);
ExploitLrMode parse_exploit_lr_mode(std::string_view name);

struct EEConfig {
  std::int64_t tau = 1;
  double epsilon = 0.01;
  OptimizerSpec explore;
  OptimizerSpec exploit;  // layer mask is forced to theta_(H-1)
  ExploitLrMode exploit_lr_mode = ExploitLrMode::manual;

  void validate(Index n, Index depth) const;
};

struct TrainResult {
  VectorXd theta;
  GateState gates;
  TrainTrace trace;
  std::vector<AlignmentRecord> alignment;
  std::vector<BoundTerms> bound_terms;
  /// max |grad_{t+1} - grad_t| / |theta_{t+1} - theta_t| over consecutive
  /// epochs of a phase, full-batch gradients.
  double lipschitz_emp = 0.0;
  double lipschitz_explore = 0.0;
  double lipschitz_exploit = 0.0;
  std::optional<std::int64_t> tau;
  double lhat = 0.0;
  double exploit_lr = 0.0;
  bool diverged = false;
  std::string divergence;
  std::string rng_state;
};

TrainResult train_plain(const Network& net, const VectorXd& theta0, const Dataset& data,
                        const OptimizerSpec& optimizer, std::int64_t epochs,
                        const TrainOptions& options = {});

/// `net` must already be gated (see to_gated); theta0 is its initial point.
TrainResult ee_train(const Network& net, const VectorXd& theta0, const Dataset& data,
                     const EEConfig& ee, std::int64_t epochs_total,
                     const TrainOptions& options = {});

/// Frozen-gate evaluation with the lower-layer features and gate values
/// computed once: only theta_(H-1) may vary between calls.
class ExploitCache {
 public:
  ExploitCache(const Network& net, const VectorXd& theta_tau, const GateState& gates,
               const MatrixXd& x);

  /// Loss over `batch` (all rows when empty) and its gradient, zero outside theta_(H-1).
  LossEval evaluate(const VectorXd& theta, const MatrixXd& y, LossKind kind,
                    const std::vector<Index>& batch = {}) const;

 private:
  const Network* net_;
  MatrixXd z_;
  std::vector<MatrixXd> gates_;
};

}  // namespace gradalign

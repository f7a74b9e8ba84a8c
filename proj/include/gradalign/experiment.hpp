#pragma once

// JSON experiment configs and the per-seed runner behind `gradalign train`.
// A config names a dataset generator (or CSV), the hidden widths, one
// optimizer, an optional EE block, the diagnostic stride and the seeds.

#include "gradalign/data.hpp"
#include "gradalign/diagnostics.hpp"
#include "gradalign/io.hpp"
#include "gradalign/model.hpp"
#include "gradalign/training.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gradalign {

struct DatasetConfig {
  std::string generator = "two-moons";  // two-moons | sine | random | csv
  Index n = 100;
  double noise = 0.0;
  double freq = 20.0;
  Index dim = 2;
  std::string path;  // csv only
  // Fixed data seed shared by every trial; when absent each trial uses its own seed.
  std::optional<std::uint64_t> seed;
};

struct DiagnosticsConfig {
  Index stride = 10;
  AlignmentOptions alignment;
  bool drift = false;
  std::vector<double> bound_etas;  // empty: no bound reports
};

struct EEBlock {
  std::int64_t tau = 2000;
  double epsilon = 0.01;
  std::optional<OptimizerSpec> exploit;  // defaults to the exploration optimizer
  ExploitLrMode exploit_lr = ExploitLrMode::manual;
};

struct ExperimentConfig {
  std::string name;
  DatasetConfig dataset;
  LossKind loss = LossKind::binary_ce;
  std::vector<Index> hidden{300, 300, 300};
  NetworkSpec network;  // layer_widths filled from the dataset and `hidden`
  OptimizerSpec optimizer;
  std::optional<EEBlock> ee;
  std::int64_t epochs = 1000;
  DiagnosticsConfig diagnostics;
  Index checkpoint_stride = 0;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "runs";
};

/// Unknown keys anywhere in the document raise SchemaError.
ExperimentConfig parse_experiment_config(const Json& j);
ExperimentConfig load_experiment_config(const std::string& path);

Dataset build_dataset(const DatasetConfig& config, LossKind kind, std::uint64_t seed);
NetworkSpec build_network_spec(const ExperimentConfig& config, const Dataset& data);

/// Bound reports for one eta: the report over all selected aligned records
/// plus whether every prefix held.
struct BoundSummary {
  BoundReport full;
  bool holds_every_prefix = false;
  std::size_t prefixes = 0;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  Dataset data;
  NetworkSpec spec;
  VectorXd theta0;
  TrainResult result;
  std::vector<BoundSummary> bounds;
  double wall_time_s = 0.0;
};

/// Bound check on a finished run. Plain runs use every sampled record with
/// the constant rate and the run's L_emp; EE runs use exploitation records
/// with the exploitation rate and the exploitation-phase L_emp.
std::vector<BoundSummary> run_bounds(const TrainResult& result, const Dataset& data,
                                     const OptimizerSpec& rate_source,
                                     const std::vector<double>& etas);

/// Trains one seed. With a non-empty `out_dir` writes trace.csv,
/// bound_terms.csv, alignment.json, summary.json and checkpoints/ there.
SeedOutcome run_seed(const ExperimentConfig& config, std::uint64_t seed,
                     const std::string& out_dir = {});

Json summary_json(const ExperimentConfig& config, const SeedOutcome& outcome);

}  // namespace gradalign

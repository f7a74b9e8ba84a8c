#pragma once

// Deterministic SVG line plots of trace columns against step: one stacked
// panel per series, fixed-precision coordinates, no timestamps.

#include "gradalign/training.hpp"

#include <string>
#include <vector>

namespace gradalign {

/// Columns accepted by plot_trace: loss, grad_norm, train_error, rel_residual, q_t, drift.
std::vector<std::string> plot_series_names();

struct PlotOptions {
  std::string title;
  std::vector<std::string> series{"train_error", "q_t"};
  bool log_loss = true;  // log10 axis for loss, grad_norm, rel_residual and drift
  int width = 640;
  int panel_height = 200;
};

/// Throws ContractError on an empty trace or an unknown series name.
std::string plot_trace(const TrainTrace& trace, const PlotOptions& options = {});

}  // namespace gradalign

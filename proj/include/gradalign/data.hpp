#pragma once

// Synthetic datasets (two-moons, sine-wave, random) and CSV persistence.
//
// CSV layout: header x0..x{m_x-1},y0..y{m_y-1}, one sample per row, decimal
// floats with 17 significant digits. A sidecar <file>.meta.json records
// {name, seed, generator, args, loss}.

#include "gradalign/linalg.hpp"
#include "gradalign/losses.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace gradalign {

struct Dataset {
  MatrixXd X;
  MatrixXd Y;
  LossKind kind = LossKind::binary_ce;
  MatrixXd Y_ell;
  std::string name;
  std::uint64_t seed = 0;
  std::string generator;
  std::map<std::string, double> args;

  Index size() const { return X.rows(); }
  void validate() const;
};

Dataset make_dataset(MatrixXd x, MatrixXd y, LossKind kind, std::string name);

/// Evenly spaced angles on [0, pi]: first half (cos t, sin t) labelled 0,
/// second half (1 - cos t, 0.5 - sin t) labelled 1, plus N(0, noise_std^2)
/// per coordinate. Rows are not shuffled.
Dataset gen_two_moons(Index n, double noise_std, std::uint64_t seed,
                      LossKind kind = LossKind::binary_ce);

/// x ~ U[-1, 1], y = 1{sin(freq x) < 0}.
Dataset gen_sine(Index n, double freq, std::uint64_t seed, LossKind kind = LossKind::binary_ce);

/// X ~ N(0, 1) entrywise, y ~ U{0, 1}.
Dataset gen_random(Index n, Index dim, std::uint64_t seed, LossKind kind = LossKind::binary_ce);

void save_csv(const Dataset& data, const std::string& path);
/// Targets must be in columns named y*; kind decides Y_ell.
Dataset load_csv(const std::string& path, LossKind kind);
/// load_csv, then fills name/seed/generator from the sidecar when present.
Dataset load_dataset(const std::string& path, LossKind kind);

}  // namespace gradalign

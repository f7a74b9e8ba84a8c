#pragma once

#include "gradalign/linalg.hpp"
#include "gradalign/rng.hpp"

namespace testutil {

using gradalign::Index;
using gradalign::MatrixXd;
using gradalign::VectorXd;

inline MatrixXd random_matrix(gradalign::Rng& rng, Index rows, Index cols, double scale = 1.0) {
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  }
  return m;
}

inline VectorXd random_vector(gradalign::Rng& rng, Index n, double scale = 1.0) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

}  // namespace testutil

#pragma once

// Seedable random source used for initialization, batching, perturbations and
// data generation.
//
// Engine: std::mt19937_64. Independent substreams are derived by mixing the
// user seed with a per-purpose tag through SplitMix64. Uniform doubles take
// the top 53 bits of one engine draw; normals use the Box-Muller transform
// (the second variate of each pair is cached). Neither step goes through the
// implementation-defined std:: distributions, so streams are reproducible
// across standard libraries.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace gradalign {

enum class Stream : std::uint64_t {
  init = 1,
  batching = 2,
  perturbation = 3,
  data = 4,
  probe = 5,
};

std::uint64_t splitmix64(std::uint64_t x);

class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  Rng(std::uint64_t seed, Stream stream);

  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gradalign

#pragma once

#include <cstdint>
#include <random>

#include "dualsmooth/types.hpp"

namespace dualsmooth {

// Seeded source for all simulation. A (seed, stream) pair selects an
// independent mt19937_64 stream through std::seed_seq, so parallel Monte-Carlo
// paths and separate simulation stages never share draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(stream >> 32)};
    engine_.seed(seq);
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  double exponential(double rate) { return std::exponential_distribution<double>(rate)(engine_); }

  // Index drawn from an unnormalized nonnegative weight vector.
  template <class Weights>
  int categorical(const Weights& w) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) total += w[i];
    double r = uniform() * total;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      r -= w[i];
      if (r < 0.0) return static_cast<int>(i);
    }
    for (Eigen::Index i = w.size() - 1; i >= 0; --i) {
      if (w[i] > 0.0) return static_cast<int>(i);
    }
    return 0;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace dualsmooth

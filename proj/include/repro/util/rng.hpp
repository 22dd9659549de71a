#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace repro {

/// SplitMix64 finalizer; used to decorrelate derived seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent stream seed from a base seed and a stream label.
/// Streams with different labels never share state, so adding a new consumer
/// does not perturb existing ones.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  template <typename It>
  void shuffle(It first, It last) {
    // Fisher-Yates with our own index draw; std::shuffle's algorithm is
    // unspecified across standard libraries.
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[index(i)]);
    }
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace repro

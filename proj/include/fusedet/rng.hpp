#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace fusedet {

// Mixes a seed with a list of stream labels into an independent seed.
// Labels are hashed bytewise so the mapping is identical on every platform.
class SeedDeriver {
 public:
  explicit SeedDeriver(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

  SeedDeriver& add(std::string_view label);
  SeedDeriver& add(std::uint64_t value);

  std::uint64_t seed() const noexcept { return mix(state_); }

 private:
  static std::uint64_t mix(std::uint64_t z) noexcept;
  std::uint64_t state_;
};

template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t seed, const Parts&... parts) {
  SeedDeriver d(seed);
  (d.add(parts), ...);
  return d.seed();
}

// Seeded stream with platform-independent distributions. The engine is the
// standard 64-bit Mersenne twister; the mappings to doubles are done here
// because std:: distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  // Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fusedet

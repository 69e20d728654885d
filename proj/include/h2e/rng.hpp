#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace h2e {

// Seeded random stream. The engine is std::mt19937_64, whose output sequence
// is fixed by the standard; the distributions below are written out here
// because the standard library ones are implementation-defined, and runs
// must reproduce byte-for-byte across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream derived from a master seed and a stream name.
  static Rng stream(std::uint64_t master_seed, std::string_view name);
  static std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view name);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  double normal();

  // Index drawn from a non-negative weight vector (need not be normalized).
  std::size_t categorical(std::span<const double> weights);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace h2e

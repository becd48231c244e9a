#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <utility>

namespace ppmn {

// Seeded random source with portable distributions. The std:: distribution
// classes are implementation-defined, which would make seeded artifacts
// differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, n). n must be > 0.
  std::size_t index(std::size_t n);
  // Uniform integer in [lo, hi].
  long uniform_int(long lo, long hi);
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Mixes several values into one seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

}  // namespace ppmn

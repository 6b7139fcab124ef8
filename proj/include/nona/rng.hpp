#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace nona {

// Reproducible random streams.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The standard library distributions are implementation-defined,
// so every derived quantity is computed here explicitly:
//   uniform()   = (next() >> 11) * 2^-53, in [0, 1)
//   normal()    = Box-Muller, cos branch only: sqrt(-2 ln(1 - u1)) cos(2 pi u2)
//   below(n)    = rejection sampling on the top bits of next()
//   shuffle()   = Fisher-Yates from the back, j = below(i + 1)
// Independent sub-streams are keyed with derive_seed (splitmix64 mixing).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t below(std::uint64_t n);

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Stream identifiers used with derive_seed throughout the library.
namespace streams {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kBatch = 4;
inline constexpr std::uint64_t kRepeat = 5;
inline constexpr std::uint64_t kAudit = 6;
}  // namespace streams

}  // namespace nona

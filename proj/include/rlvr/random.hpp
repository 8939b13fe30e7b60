#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>
#include <string_view>

namespace rlvr {

// One SplitMix64 round; used to derive independent stream seeds.
std::uint64_t mixSeed(std::uint64_t x);

// Seed for a child stream identified by a path of integers under `base`.
std::uint64_t deriveSeed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

// Seed for a named child stream (e.g. a pipeline stage) under `base`.
std::uint64_t deriveSeed(std::uint64_t base, std::string_view tag);

// Portable random source. Draws are defined on top of the raw mt19937_64
// output so results do not depend on the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

// Fisher-Yates on top of Rng::below, so the permutation is portable.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace rlvr

#include "rlvr/random.hpp"

#include "rlvr/error.hpp"

namespace rlvr {

std::uint64_t mixSeed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t deriveSeed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mixSeed(base);
  for (std::uint64_t p : path) h = mixSeed(h ^ mixSeed(p + 0x632BE59BD9B4E019ULL));
  return h;
}

std::uint64_t deriveSeed(std::uint64_t base, std::string_view tag) {
  // FNV-1a over the tag, then mixed with the base.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return deriveSeed(base, {h});
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ContractViolation("Rng::below requires n > 0");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

}  // namespace rlvr

#pragma once

#include <cstdint>
#include <initializer_list>
#include <utility>

#include <cmath>

namespace cirtf {

// SplitMix64 step. Fast, well-mixed, and fully specified, so every stream we
// derive from it is identical across platforms and standard libraries.
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Folds a list of values into one seed. Used to derive independent streams
// per (seed, purpose, epoch, sample) so results never depend on execution
// order or thread scheduling.
inline uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0x243F6A8885A308D3ULL;  // pi digits
  for (uint64_t p : parts) {
    h ^= p;
    splitmix64(h);
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound). Fixed-point multiply keeps the mapping
  // platform-independent; bias is O(bound / 2^64).
  uint64_t uniform_int(uint64_t bound) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * bound) >> 64);
  }

  // Two independent standard normals (Box-Muller).
  std::pair<double, double> normal_pair() {
    double u1 = uniform();
    // Guard against log(0).
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * uniform();
    return {r * std::cos(theta), r * std::sin(theta)};
  }

  double normal() { return normal_pair().first; }

 private:
  uint64_t state_;
};

// Stream tags, spelled out so derived seeds are self-documenting.
namespace seed_tag {
inline constexpr uint64_t trajectory = 0x7472616A;  // "traj"
inline constexpr uint64_t noise = 0x6E6F6973;       // "nois"
inline constexpr uint64_t mask = 0x6D61736B;        // "mask"
inline constexpr uint64_t val_mask = 0x766D736B;    // "vmsk"
inline constexpr uint64_t dropout = 0x64726F70;     // "drop"
inline constexpr uint64_t shuffle = 0x73687566;     // "shuf"
inline constexpr uint64_t init = 0x696E6974;        // "init"
inline constexpr uint64_t split = 0x73706C74;       // "splt"
inline constexpr uint64_t subsample = 0x73756273;   // "subs"
}  // namespace seed_tag

}  // namespace cirtf

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "parley/digest.hpp"

namespace parley {

// splitmix64 finalizer; the workhorse for counter-based seed derivation.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// Per-cell seed: pure function of (run seed, sample id, agent, round), so a
// run is reproducible regardless of worker scheduling.
inline uint64_t derive_cell_seed(uint64_t run_seed, std::string_view sample_id, int agent_index, int round) {
  uint64_t s = mix_seed(run_seed, fnv1a64(sample_id));
  s = mix_seed(s, static_cast<uint64_t>(agent_index) + 0x10001);
  s = mix_seed(s, static_cast<uint64_t>(round) + 0x20002);
  return s;
}

inline uint64_t derive_run_seed(uint64_t master_seed, uint64_t run_index) {
  return mix_seed(master_seed, run_index + 0x40004);
}

// mt19937_64 is fully specified by the standard; the draw helpers below avoid
// std distributions, whose output is implementation defined.
class DetRng {
 public:
  explicit DetRng(uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1) with 53 bits.
  double next_double() { return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0); }

  // Uniform in [0, n). Modulo bias is < 2^-50 for any n that fits a size_t.
  size_t next_below(size_t n) { return n <= 1 ? 0 : static_cast<size_t>(gen_() % n); }

  bool chance(double p) { return next_double() < p; }

  uint64_t next_u64() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace parley

#pragma once
// Deterministic PRNG (xoshiro256++, splitmix64 seeding) with explicit,
// serializable state. Mappings to floats are hand-rolled so streams are
// identical across platforms and standard libraries.

#include <array>
#include <cmath>
#include <cstdint>

namespace mer {

namespace detail {

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t rotl64(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

}  // namespace detail

class Rng {
 public:
  explicit Rng(uint64_t seed = 0, uint64_t stream = 0) {
    uint64_t x = seed ^ (0x6a09e667f3bcc909ULL * (stream + 1));
    for (auto& s : state_) s = detail::splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = detail::rotl64(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl64(state_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  float uniformf() { return float(uniform()); }

  // uniform in [-a, +a]
  float symmetric(float a) { return a * (2.0f * uniformf() - 1.0f); }

  // standard normal via Box-Muller; no cached spare so the state alone
  // fully describes the stream
  float normal() {
    double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return float(std::sqrt(-2.0 * std::log(u1)) *
                 std::cos(6.283185307179586 * u2));
  }

  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  std::array<uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

 private:
  std::array<uint64_t, 4> state_{};
};

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t x = a ^ (b * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL);
  return detail::splitmix64(x);
}

}  // namespace mer

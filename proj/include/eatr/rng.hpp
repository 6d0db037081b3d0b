#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

namespace eatr {

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic stream derivation: child streams of a base seed.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  uint64_t x = base ^ (0x6a09e667f3bcc909ULL + stream * 0x9e3779b97f4a7c15ULL);
  return splitmix64(x);
}

// xoshiro256++ with hand-rolled distributions. std:: distributions are
// implementation-defined sequences; this keeps generated datasets and
// training runs reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive. Rejection sampling, unbiased.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t range = uint64_t(hi - lo) + 1;
    if (range == 0) return int64_t(next_u64());  // full 64-bit range
    uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return lo + int64_t(v % range);
  }

  // Standard normal via Box-Muller with cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates shuffle of an index vector.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(0, int64_t(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Serializable state: 4 words of engine state plus the normal() spare.
  std::vector<uint64_t> save_state() const {
    std::vector<uint64_t> out(s_.begin(), s_.end());
    out.push_back(has_spare_ ? 1 : 0);
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(spare_));
    std::memcpy(&bits, &spare_, sizeof(bits));
    out.push_back(bits);
    return out;
  }

  void restore_state(const std::vector<uint64_t>& state) {
    if (state.size() != 6) return;
    for (int i = 0; i < 4; ++i) s_[i] = state[size_t(i)];
    has_spare_ = state[4] != 0;
    std::memcpy(&spare_, &state[5], sizeof(spare_));
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace eatr

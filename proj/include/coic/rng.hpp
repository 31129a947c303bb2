#pragma once
// PCG32-based generator with explicit, serializable state. Every random
// draw in the project goes through this so that runs replay bit-for-bit
// and checkpoint resume can restore the exact stream position.

#include <cmath>
#include <cstdint>

namespace coic {

class Rng {
 public:
  Rng() : Rng(0x853c49e6748fea9bULL) {}
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0xda3e39cb94b95bdbULL) {
    state_ = 0;
    inc_ = (stream << 1) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  // Uniform in [0, 1).
  double uniform() { return next_u32() * (1.0 / 4294967296.0); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint32_t below(std::uint32_t n) {
    return static_cast<std::uint32_t>(uniform() * n) % n;
  }

  // Box-Muller, no spare caching so the stream position stays explicit.
  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

  std::uint64_t state() const { return state_; }
  std::uint64_t inc() const { return inc_; }
  void restore(std::uint64_t state, std::uint64_t inc) {
    state_ = state;
    inc_ = inc;
  }

  // Derive an independent child stream; used to give each sample / worker
  // its own deterministic sequence.
  Rng fork(std::uint64_t salt) { return Rng(next_u32() ^ (salt * 0x9e3779b97f4a7c15ULL), salt | 1); }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

}  // namespace coic

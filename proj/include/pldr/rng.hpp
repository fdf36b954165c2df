#pragma once

#include <cmath>
#include <cstdint>

namespace pldr {

// Counter-based splitmix64 generator. The whole state is two u64 words,
// which makes checkpointed training runs exactly resumable.
class Rng {
 public:
  Rng() = default;
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // standard normal via Box-Muller; consumes two uniforms per call
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // integer in [0, n)
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

  // independent stream derived from this seed, for parallel substreams
  Rng fork(uint64_t stream) const {
    Rng r(state_ ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_ = 0x853c49e6748fea9bull;
};

}  // namespace pldr

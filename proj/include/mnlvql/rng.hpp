#pragma once

#include <cstdint>
#include <vector>

// Counter-based generator built on the splitmix64 finalizer. Standard-library
// distributions are not bit-portable across implementations, so everything
// that needs cross-platform determinism (trajectories, env construction,
// replication seeding) goes through this.

namespace mnlvql {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x243f6a8885a308d3ull)), ctr_(0) {}

  static std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return mix64(key_ + (++ctr_) * 0x9e3779b97f4a7c15ull); }

  // Independent stream keyed off this generator's seed; does not consume
  // state, so derivation order never perturbs the parent sequence.
  Rng derive(std::uint64_t stream) const {
    Rng child(0);
    child.key_ = mix64(key_ ^ mix64(stream * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
    child.ctr_ = 0;
    return child;
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform_real(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform in {0, ..., n-1}, rejection-sampled to kill modulo bias.
  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t bound = n * ((~std::uint64_t{0}) / n);
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= bound);
    return r % n;
  }

  // Index sampled from an (unnormalized is fine) nonnegative weight vector.
  int sample_categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform01() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_;
};

}  // namespace mnlvql

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace transit {

// mt19937_64 with hand-rolled draw helpers. The <random> distribution objects are
// implementation-defined, so seeded runs would differ between standard libraries;
// the raw engine is fully specified, and these helpers keep streams byte-identical.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  // Independent stream for (seed, salt); used to hand each worker/episode its own rng.
  Rng(uint64_t seed, uint64_t salt) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(salt), static_cast<uint32_t>(salt >> 32)};
    eng_.seed(seq);
  }

  uint64_t raw() { return eng_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return (eng_() >> 11) * (1.0 / 9007199254740992.0); }

  // Uniform in (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, unbiased.
  uint64_t below(uint64_t n) {
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  int index(size_t n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform_open();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Draws index k with probability weights[k] / sum(weights). Zero-sum inputs are the
  // caller's problem; we fall back to uniform so a degenerate weight vector cannot crash.
  int weighted_index(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) return index(weights.size());
    double x = uniform() * total;
    double acc = 0.0;
    for (size_t k = 0; k < weights.size(); ++k) {
      acc += weights[k];
      if (x < acc) return static_cast<int>(k);
    }
    return static_cast<int>(weights.size() - 1);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace transit

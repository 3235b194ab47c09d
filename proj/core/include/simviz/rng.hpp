#ifndef SIMVIZ_RNG_HPP
#define SIMVIZ_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace simviz {

/// Deterministic random stream. The mt19937_64 engine is standardized, and
/// all value transforms are implemented here rather than through the
/// implementation-defined std::*_distribution classes, so a seed produces
/// bit-identical sequences on every platform and compiler.
class RandomStream {
public:
  explicit RandomStream(uint64_t seed) : gen_(seed) {}

  uint64_t raw() { return gen_(); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller. Consumes exactly two raw draws per
  /// call; no spare is cached, which keeps the draw order transparent.
  double normal() {
    const double u1 = static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Uniform index in [0, n) via Lemire's multiply-shift reduction.
  int64_t index(int64_t n) {
    return static_cast<int64_t>((static_cast<__uint128_t>(gen_()) * static_cast<uint64_t>(n)) >> 64);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = index(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  /// Derives an independent child stream; used to give each model layer or
  /// dataset section its own stream without coupling draw counts.
  RandomStream fork(uint64_t salt) {
    uint64_t s = gen_() ^ (salt * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    return RandomStream(s);
  }

private:
  std::mt19937_64 gen_;
};

}  // namespace simviz

#endif

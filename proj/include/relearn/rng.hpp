// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace relearn {

/// Seeded generator with portable draws.
///
/// The standard distributions are implementation-defined, so uniform, normal
/// and integer draws are derived directly from the 64-bit engine output. Every
/// stream is keyed by a list of integers (seed, purpose, index...) through
/// std::seed_seq, whose algorithm is fixed by the standard.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : Rng({seed}) {}

  Rng(std::initializer_list<std::uint64_t> key) {
    std::vector<std::uint32_t> words;
    words.reserve(key.size() * 2);
    for (auto k : key) {
      words.push_back(static_cast<std::uint32_t>(k & 0xffffffffu));
      words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    engine_.seed(seq);
  }

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second variate is discarded.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n) by rejection, n > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

 private:
  std::mt19937_64 engine_;
};

/// Stream identifiers, so that independent consumers never share draws.
enum class Stream : std::uint64_t {
  kInit = 1,
  kReinit = 2,
  kShuffle = 3,
  kAugment = 4,
  kData = 5,
  kSplit = 6,
  kEpisode = 7,
  kHead = 8,
  kProbe = 9,
  kGradCheck = 10,
};

inline Rng stream_rng(std::uint64_t seed, Stream s, std::uint64_t index = 0) {
  return Rng({seed, static_cast<std::uint64_t>(s), index});
}

}  // namespace relearn

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace ana {

// Deterministic random source. All distributions are hand-rolled on top of
// mt19937_64 so that streams are stable across standard libraries; every
// consumer takes an Rng& and never shares one across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive. Rejection sampling keeps the
  // distribution exact.
  int uniform_int(int lo, int hi);

  // Standard normal via Box-Muller.
  double normal();

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(0, i);
      std::swap(v[i], v[static_cast<std::size_t>(j)]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

// Hash-combines seed parts into one 64-bit stream seed (splitmix64 chain).
// Used to derive independent per-epoch / per-step / per-image streams from a
// single master seed, which keeps resumed runs bit-identical without having
// to serialize generator state.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace ana

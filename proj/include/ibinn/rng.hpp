#ifndef IBINN_RNG_HPP
#define IBINN_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ibinn {

// Deterministic random stream. All randomness flows from one master seed;
// components derive named sub-streams (data, noise, init, ...) so each is
// reproducible in isolation and runs are bit-identical given the same seed.
//
// Uniform and normal draws are generated by explicit transforms of the raw
// mt19937_64 output rather than std::*_distribution, whose sequences are
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();

  // Uniform index in [0, n) by rejection, bias-free.
  std::size_t index(std::size_t n);

  void fill_normal(std::vector<double>& out) {
    for (double& x : out) x = normal();
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Child seed for a named sub-stream; an optional index separates per-epoch
// or per-worker streams of the same name.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

inline Rng derive_rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, stream, index));
}

}  // namespace ibinn

#endif  // IBINN_RNG_HPP

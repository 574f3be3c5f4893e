#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace idfm {

// splitmix64; used to derive independent stream seeds from one master seed.
std::uint64_t mix64(std::uint64_t x);

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t counter = 0) {
  return mix64(master ^ mix64(stream ^ mix64(counter + 0x9e3779b97f4a7c15ull)));
}

// Deterministic random stream. The mt19937_64 engine is fully pinned by the
// standard; the value transforms below are ours, so every draw reproduces
// across platforms (std::uniform_* distributions do not guarantee that).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi);  // inclusive bounds

  double normal();  // standard normal, Box-Muller
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with our own index draws, pinned across stdlibs.
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace idfm

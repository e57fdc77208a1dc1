#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "nhmc/core.hpp"

namespace nhmc {

// FNV-1a; used for sub-stream derivation and config hashing.
inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Named sub-stream of a root seed. Every consumer (problem synthesis,
// chain i, ...) derives its own stream, so adding chains or reordering
// consumers never perturbs the draws of existing ones.
class RngStream {
 public:
  RngStream(std::uint64_t root_seed, std::string_view name)
      : engine_(splitmix64(root_seed ^ fnv1a64(name))) {}

  double uniform() { return uniform_(engine_); }  // [0, 1)
  double normal() { return normal_(engine_); }

  Vector normal_vector(int n) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace nhmc

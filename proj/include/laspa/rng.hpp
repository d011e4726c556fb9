#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace laspa {

// Counter-free splitmix64 step. Used both as the stream generator and to
// derive substream seeds; std::mt19937 / <random> distributions are not
// bit-stable across standard libraries, this is.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic random stream. All randomness in the project flows from a
// single config seed through named substreams: stream = f(seed, purpose,
// index), so parallel and serial generation of independent items agree.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Decorrelate trivially related seeds (0, 1, 2, ...).
    splitmix64(state_);
  }

  static Rng substream(std::uint64_t seed, std::string_view purpose,
                       std::uint64_t index = 0) {
    std::uint64_t s = seed;
    splitmix64(s);
    s ^= fnv1a64(purpose);
    splitmix64(s);
    s ^= index * 0xd6e8feb86659fd93ULL;
    return Rng(s);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Modulo bias is < 2^-40 for the n used here (corpus-scale counts).
    return next_u64() % n;
  }

  // Standard normal via Box-Muller, pairwise cached.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // Avoid log(0).
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace laspa

#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace crowdlabel {

// std::mt19937_64's output sequence is fixed by the standard; the
// distributions are not, so bounded draws and shuffles are done here to keep
// artifacts byte-identical across standard libraries.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ splitmix64(v));
}

inline std::uint64_t mix_seed(std::uint64_t h, std::string_view s) {
  // FNV-1a over the bytes, then folded into the running state.
  std::uint64_t f = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    f ^= c;
    f *= 0x100000001b3ULL;
  }
  return mix_seed(h, f);
}

/// Derives an independent stream seed from a root seed and any number of
/// integer or string tags, e.g. derive_seed(seed, "contains", worker, task).
template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t root, const Tags&... tags) {
  std::uint64_t h = splitmix64(root);
  ((h = mix_seed(h, tags)), ...);
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// k distinct elements of `from`, in draw order.
  template <typename T>
  std::vector<T> sample(std::vector<T> from, std::size_t k) {
    if (k > from.size()) k = from.size();
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(below(from.size() - i));
      std::swap(from[i], from[j]);
    }
    from.resize(k);
    return from;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace crowdlabel

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mmdm {

// Exception hierarchy. Domain preconditions raise DomainError with a message
// naming the violated condition; shape/dimension problems raise ShapeMismatch.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};

struct DomainError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct FormatError : Error {
  int line;
  FormatError(int line_no, const std::string& reason)
      : Error("line " + std::to_string(line_no) + ": " + reason), line(line_no) {}
};

struct ConfigError : Error {
  using Error::Error;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic random source. Gaussians use Box-Muller on top of the
// standard-specified mt19937_64 stream, so sequences are identical across
// standard libraries.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed) : gen_(splitmix64(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // uniform in (0, 1]
  double uniform_pos() { return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    if (n <= 0) throw DomainError("uniform_int: n must be positive");
    // rejection sampling for unbiased draws
    const uint64_t bound = UINT64_MAX - UINT64_MAX % static_cast<uint64_t>(n);
    uint64_t v;
    do {
      v = gen_();
    } while (v >= bound);
    return static_cast<int>(v % static_cast<uint64_t>(n));
  }

  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child stream; used to hand each sequence / phase its own RNG.
  RandomStream fork(uint64_t stream_id) const {
    return RandomStream(splitmix64(state_hash() ^ splitmix64(stream_id)));
  }
  RandomStream fork(const std::string& tag) const { return fork(fnv1a(tag)); }

 private:
  uint64_t state_hash() const {
    // hash the engine's textual state so forks of the same parent differ from
    // forks of a reseeded parent mid-stream
    std::mt19937_64 copy = gen_;
    return copy();
  }
  std::mt19937_64 gen_;
};

}  // namespace mmdm

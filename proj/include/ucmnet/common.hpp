#pragma once

// Shared error types, deterministic RNG, and small utilities used across the
// library. Nothing here depends on the tensor types.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ucmnet {

// Shape or rank mismatch between tensors / configs.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure: division by zero in checked mode, non-finite values where
// finiteness is required, degenerate normalization, etc.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external input: config files, manifests, checkpoints, PNGs.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / OS level failure.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

#define UCM_CHECK(cond, etype, msg)            \
  do {                                         \
    if (!(cond)) {                             \
      std::ostringstream oss_;                 \
      oss_ << msg;                             \
      throw etype(oss_.str());                 \
    }                                          \
  } while (0)

#define UCM_CHECK_SHAPE(cond, msg) UCM_CHECK(cond, ::ucmnet::ShapeError, msg)
#define UCM_CHECK_NUMERIC(cond, msg) UCM_CHECK(cond, ::ucmnet::NumericError, msg)

// splitmix64: cheap stateless mixer, used to derive per-sample seeds and the
// token palette. Fixed algorithm so outputs never depend on the platform.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  x = x ^ (x >> 31);
  return x;
}

inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
  return splitmix64(splitmix64(seed) ^ (index + 0x9e3779b97f4a7c15ull));
}

// Deterministic RNG wrapper. mt19937_64 has standard-mandated output, and the
// uniform/normal transforms below are spelled out explicitly instead of using
// std::*_distribution, whose algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1): 53 mantissa bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(engine_() % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller; consumes two uniforms per pair.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // Guard log(0).
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // State round-trips through text; used by checkpoints so a resumed run
  // consumes the identical random stream.
  std::string serialize() const {
    std::ostringstream oss;
    oss << engine_ << ' ' << (have_spare_ ? 1 : 0) << ' ';
    oss.precision(17);
    oss << std::scientific << spare_;
    return oss.str();
  }

  void deserialize(const std::string& text) {
    std::istringstream iss(text);
    int spare_flag = 0;
    iss >> engine_ >> spare_flag >> spare_;
    UCM_CHECK(!iss.fail(), ParseError, "bad rng state string");
    have_spare_ = spare_flag != 0;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ucmnet

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pica {

// Error hierarchy. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ConstructionError : Error {
  using Error::Error;
};
struct SamplingError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct MissingArtifactError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};
struct TransportError : Error {
  using Error::Error;
};
// A request was rejected by a service (4xx); carries the service message.
struct ValidationError : Error {
  ValidationError(int status, const std::string& msg) : Error(msg), status(status) {}
  int status;
};

using Rng = std::mt19937_64;

// Derives an independent stream from a base seed and stream coordinates.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {}) {
  std::seed_seq::result_type parts[16];
  std::size_t n = 0;
  parts[n++] = static_cast<std::uint32_t>(seed);
  parts[n++] = static_cast<std::uint32_t>(seed >> 32);
  for (auto s : stream) {
    if (n + 2 > 16) break;
    parts[n++] = static_cast<std::uint32_t>(s);
    parts[n++] = static_cast<std::uint32_t>(s >> 32);
  }
  std::seed_seq seq(parts, parts + n);
  return Rng(seq);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// FNV-1a, 64 bit. Used for content hashes (model versions, run directories).
inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) without underflow for large |x|.
inline double log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace pica

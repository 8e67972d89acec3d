#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file common.hpp
 * @brief Shared primitives: token/prompt ids, error taxonomy, deterministic
 *        RNG streams, and exact text round-tripping for doubles.
 *
 * Everything downstream (policies, oracles, trainers, the harness) leans on
 * three contracts fixed here:
 * - doubles are serialized with shortest round-trip formatting (to_chars),
 *   so save->load is bit-exact;
 * - randomness comes from a single engine type whose state is textual and
 *   restorable, so (seed, config) fully determines every run;
 * - failure modes are typed exceptions, one per contract violation.
 */

#include <charconv>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace opdlab {

using TokenId = int;
using PromptId = long long;

// ============================================================================
// Errors
// ============================================================================

/// Policy table has no entry for a queried (prompt, context) pair.
struct MissingContextError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A distribution assigns (effectively) zero mass where its counterpart needs
/// support. Probabilities below kSupportEps count as zero, never clamped.
struct SupportMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// vocab^horizon exceeds the configured enumeration cap.
struct EnumerationTooLargeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Geometric-mixture weights degenerated to non-finite values.
struct UnderflowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parameter vectors do not share a layout (slot keys or sizes differ).
struct LayoutMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// GRPO group has fewer than two rollouts.
struct GroupTooSmallError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A gradient or objective went non-finite during training.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or out-of-schema configuration / serialized input.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Probability mass below this threshold is treated as "no support".
inline constexpr double kSupportEps = 1e-300;

// ============================================================================
// Exact double <-> text
// ============================================================================

/// Shortest decimal form that parses back to the identical bit pattern.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ConfigError("bad floating-point literal: '" + std::string(s) + "'");
  }
  return v;
}

inline long long parse_int(std::string_view s) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ConfigError("bad integer literal: '" + std::string(s) + "'");
  }
  return v;
}

// ============================================================================
// Deterministic RNG
// ============================================================================

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent stream seed from (seed, tag) pairs.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag));
}

/**
 * mt19937_64 behind a fixed uniform mapping.
 *
 * std::uniform_real_distribution is implementation-defined, so uniforms are
 * produced directly from raw 64-bit draws; the textual engine state
 * round-trips exactly through save()/load().
 */
class Rng {
 public:
  Rng() : eng_(0) {}
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection-free modulo is fine at toy scale.
  uint64_t below(uint64_t n) { return eng_() % n; }

  /// Child stream decorrelated from this one.
  Rng fork(uint64_t tag) { return Rng(derive_seed(eng_(), tag)); }

  std::string save() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void load(const std::string& state) {
    std::istringstream is(state);
    is >> eng_;
    if (!is) throw ConfigError("bad rng state");
  }

 private:
  std::mt19937_64 eng_;
};

/// Fisher-Yates with our own uniform draws, for reproducible shuffles.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace opdlab

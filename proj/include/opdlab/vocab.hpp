#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file vocab.hpp
 * @brief Token alphabet with a distinguished EOS, and finite token sequences.
 *
 * A trajectory is a generated response: an ordered token list that either
 * ends with EOS or was cut at the horizon. EOS never appears earlier.
 */

#include <string>
#include <vector>

#include "opdlab/common.hpp"

namespace opdlab {

struct Vocab {
  int size = 0;       // dense token ids 0..size-1
  TokenId eos_id = 0; // in [0, size)

  Vocab() = default;
  Vocab(int size_, TokenId eos)
      : size(size_), eos_id(eos) {
    if (size < 2) throw ConfigError("vocab size must be >= 2");
    if (eos_id < 0 || eos_id >= size) throw ConfigError("eos_id out of range");
  }

  bool valid_token(TokenId t) const { return t >= 0 && t < size; }
  bool is_eos(TokenId t) const { return t == eos_id; }

  friend bool operator==(const Vocab&, const Vocab&) = default;
};

struct Trajectory {
  PromptId prompt_id = 0;
  std::vector<TokenId> tokens;

  int length() const { return static_cast<int>(tokens.size()); }

  bool terminated(const Vocab& v) const {
    return !tokens.empty() && v.is_eos(tokens.back());
  }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Checks the trajectory invariants: nonempty, within horizon, all tokens in
/// range, EOS only at the final position.
inline bool trajectory_valid(const Trajectory& t, const Vocab& v, int horizon) {
  if (t.tokens.empty() || t.length() > horizon) return false;
  for (int i = 0; i < t.length(); ++i) {
    if (!v.valid_token(t.tokens[i])) return false;
    if (v.is_eos(t.tokens[i]) && i + 1 != t.length()) return false;
  }
  return true;
}

}  // namespace opdlab

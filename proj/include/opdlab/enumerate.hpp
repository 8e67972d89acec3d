#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file enumerate.hpp
 * @brief Exhaustive enumeration of the finite sequence space, replacing
 *        Monte-Carlo expectations with exact sums in the oracles.
 *
 * A complete sequence either ends with EOS at some position <= horizon or
 * has exactly `horizon` tokens with no earlier EOS. Enumeration order is
 * depth-first in ascending token id, which is deterministic and stable.
 */

#include <algorithm>
#include <vector>

#include "opdlab/common.hpp"
#include "opdlab/policy.hpp"
#include "opdlab/vocab.hpp"

namespace opdlab {

inline constexpr uint64_t kDefaultEnumCap = uint64_t{1} << 20;

/// Number of complete sequences: sum_{t=1..H} (v-1)^(t-1) EOS-terminated
/// plus (v-1)^H horizon-truncated. Saturates instead of overflowing.
inline uint64_t count_sequences(const Vocab& vocab, int horizon) {
  const uint64_t branching = static_cast<uint64_t>(vocab.size - 1);
  uint64_t total = 0;
  uint64_t pow = 1;  // branching^(t-1)
  for (int t = 1; t <= horizon; ++t) {
    if (total > (uint64_t{1} << 62)) return uint64_t{1} << 62;
    total += pow;
    if (pow > (uint64_t{1} << 62) / std::max<uint64_t>(branching, 1)) {
      return uint64_t{1} << 62;
    }
    pow *= branching;
  }
  return total + pow;
}

namespace detail {
inline void enumerate_rec(const Vocab& vocab, int horizon, PromptId prompt_id,
                          std::vector<TokenId>& stack,
                          std::vector<Trajectory>& out) {
  for (TokenId t = 0; t < vocab.size; ++t) {
    stack.push_back(t);
    if (vocab.is_eos(t) || static_cast<int>(stack.size()) == horizon) {
      out.push_back(Trajectory{prompt_id, stack});
    } else {
      enumerate_rec(vocab, horizon, prompt_id, stack, out);
    }
    stack.pop_back();
  }
}
}  // namespace detail

/// All complete sequences for (vocab, horizon), deterministic order,
/// no duplicates. Throws EnumerationTooLargeError beyond `cap`.
inline std::vector<Trajectory> enumerate_sequences(
    const Vocab& vocab, int horizon, PromptId prompt_id = 0,
    uint64_t cap = kDefaultEnumCap) {
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  uint64_t n = count_sequences(vocab, horizon);
  if (n > cap) {
    throw EnumerationTooLargeError(
        "sequence space has " + std::to_string(n) + " elements, cap is " +
        std::to_string(cap));
  }
  std::vector<Trajectory> out;
  out.reserve(static_cast<size_t>(n));
  std::vector<TokenId> stack;
  detail::enumerate_rec(vocab, horizon, prompt_id, stack, out);
  return out;
}

/// Enumerated sequences with their log-probabilities under one policy.
struct SequenceDist {
  std::vector<Trajectory> seqs;
  std::vector<double> logp;
};

inline SequenceDist sequence_distribution(const TablePolicy& policy,
                                          PromptId prompt, int horizon,
                                          uint64_t cap = kDefaultEnumCap) {
  SequenceDist d;
  d.seqs = enumerate_sequences(policy.vocab(), horizon, prompt, cap);
  d.logp.resize(d.seqs.size());
  for (size_t i = 0; i < d.seqs.size(); ++i) {
    d.logp[i] = policy.logprob_sequence(d.seqs[i]);
  }
  return d;
}

}  // namespace opdlab

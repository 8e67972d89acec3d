#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file rewards.hpp
 * @brief Dense implicit token rewards, sparse outcome rewards, scaling, and
 *        reward correction.
 *
 * The implicit reward of token y_t is the log-probability shift
 * log pi*(y_t|x,y_<t) - log pi_ref(y_t|x,y_<t): how much the teacher lifts
 * the token relative to the reference. Sparse outcome rewards live only on
 * the final token. Correction rewrites a student-base-referenced reward
 * into the teacher-base-referenced one by adding the per-token base ratio.
 */

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "opdlab/common.hpp"
#include "opdlab/policy.hpp"
#include "opdlab/vocab.hpp"

#include "json.hpp"

namespace opdlab {

enum class RewardKind { Implicit, SparseOutcome };

struct TokenRewardVector {
  std::vector<double> values;  // one per trajectory token
  RewardKind kind = RewardKind::Implicit;
};

/// values[t] = log pi*(y_t | x, y_<t) - log pi_ref(y_t | x, y_<t).
inline TokenRewardVector implicit_token_rewards(const TablePolicy& teacher,
                                                const TablePolicy& reference,
                                                const Trajectory& traj) {
  TokenRewardVector r;
  r.kind = RewardKind::Implicit;
  auto lt = teacher.token_logprobs(traj);
  auto lr = reference.token_logprobs(traj);
  r.values.resize(lt.size());
  for (size_t t = 0; t < lt.size(); ++t) r.values[t] = lt[t] - lr[t];
  return r;
}

/// Rewrites rewards built against the student base into rewards against the
/// teacher base: values[t] += log pi_base^student - log pi_base^teacher.
/// The result equals implicit_token_rewards(teacher, teacher_base, traj).
inline TokenRewardVector reward_correction(const TokenRewardVector& rewards,
                                           const TablePolicy& student_base,
                                           const TablePolicy& teacher_base,
                                           const Trajectory& traj) {
  if (rewards.values.size() != static_cast<size_t>(traj.length())) {
    throw LayoutMismatchError("reward_correction: reward/trajectory length mismatch");
  }
  TokenRewardVector out = rewards;
  auto lsb = student_base.token_logprobs(traj);
  auto ltb = teacher_base.token_logprobs(traj);
  for (size_t t = 0; t < out.values.size(); ++t) {
    out.values[t] += lsb[t] - ltb[t];
  }
  return out;
}

/// Zeros everywhere except the final entry: 1.0 on a verifier pass, else 0.
inline TokenRewardVector sparse_outcome_reward(bool verifier_result,
                                               const Trajectory& traj) {
  TokenRewardVector r;
  r.kind = RewardKind::SparseOutcome;
  r.values.assign(static_cast<size_t>(traj.length()), 0.0);
  if (!r.values.empty()) r.values.back() = verifier_result ? 1.0 : 0.0;
  return r;
}

inline TokenRewardVector scale_rewards(const TokenRewardVector& rewards,
                                       double lambda) {
  TokenRewardVector out = rewards;
  for (double& v : out.values) v *= lambda;
  return out;
}

/// One JSONL record per trajectory: tokens plus per-token rewards per role.
inline void dump_rewards_jsonl(
    std::ostream& os, const Trajectory& traj,
    const std::map<std::string, TokenRewardVector>& per_role) {
  nlohmann::json j;
  j["prompt_id"] = traj.prompt_id;
  j["tokens"] = traj.tokens;
  for (const auto& [role, rv] : per_role) {
    j["rewards"][role] = rv.values;
  }
  os << j.dump() << "\n";
}

}  // namespace opdlab

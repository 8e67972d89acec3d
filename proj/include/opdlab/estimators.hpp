#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file estimators.hpp
 * @brief Per-token advantages and gradient estimators, plus exact
 *        enumeration and finite-difference oracles to verify them.
 *
 * Sign convention, fixed once for the whole project: policy_gradient always
 * returns the vector the trainer SUBTRACTS (descent on a loss).
 * - GradientSign::Minimize — the objective is minimized as stated (reverse
 *   KL and its discount-0 surrogate); the estimator's own gradient is
 *   returned unchanged.
 * - GradientSign::Maximize — the objective is maximized (KL-constrained RL
 *   reward); the estimator's gradient is negated so that subtracting it
 *   performs ascent.
 *
 * Advantage variants:
 * - opd-full: values[t] = sum_{t'>=t} (log pi_theta - log pi*)(y_t'), the
 *   unbiased suffix-sum coefficients of the full gradient;
 * - opd-d0:   values[t] = (log pi_theta - log pi*)(y_t), the discount-0
 *   truncation;
 * - gopd:     values[t] = (log pi_theta - log pi*)(y_t)
 *                        + (lambda-1) (log pi_ref - log pi*)(y_t);
 * - grpo:     sequence reward, group-mean-centered and std-normalized,
 *   broadcast to every token.
 */

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "opdlab/common.hpp"
#include "opdlab/enumerate.hpp"
#include "opdlab/policy.hpp"

namespace opdlab {

enum class AdvantageVariant { OpdFull, OpdD0, Gopd, Grpo };
enum class GradientSign { Minimize, Maximize };

struct AdvantageVector {
  std::vector<double> values;  // one per trajectory token
  AdvantageVariant variant = AdvantageVariant::OpdD0;
};

struct GradientVector {
  std::vector<double> values;  // aligned with the policy parameter layout

  bool finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

// ============================================================================
// Advantages
// ============================================================================

inline AdvantageVector opd_advantages_discount0(const TablePolicy& student,
                                                const TablePolicy& teacher,
                                                const Trajectory& traj) {
  AdvantageVector a;
  a.variant = AdvantageVariant::OpdD0;
  auto ls = student.token_logprobs(traj);
  auto lt = teacher.token_logprobs(traj);
  a.values.resize(ls.size());
  for (size_t t = 0; t < ls.size(); ++t) a.values[t] = ls[t] - lt[t];
  return a;
}

inline AdvantageVector opd_advantages_full(const TablePolicy& student,
                                           const TablePolicy& teacher,
                                           const Trajectory& traj) {
  AdvantageVector a = opd_advantages_discount0(student, teacher, traj);
  a.variant = AdvantageVariant::OpdFull;
  // Suffix sums, accumulated backwards: values[t] = delta_t + values[t+1].
  if (a.values.size() >= 2) {
    for (size_t t = a.values.size() - 1; t-- > 0;) {
      a.values[t] += a.values[t + 1];
    }
  }
  return a;
}

inline AdvantageVector gopd_advantages(const TablePolicy& student,
                                       const TablePolicy& teacher,
                                       const TablePolicy& reference,
                                       double lambda, const Trajectory& traj) {
  AdvantageVector a;
  a.variant = AdvantageVariant::Gopd;
  auto ls = student.token_logprobs(traj);
  auto lt = teacher.token_logprobs(traj);
  a.values.resize(ls.size());
  if (lambda == 1.0) {
    // The (lambda-1) term vanishes identically; skip the reference so the
    // result is bitwise equal to opd-d0 regardless of reference choice.
    for (size_t t = 0; t < ls.size(); ++t) a.values[t] = ls[t] - lt[t];
    return a;
  }
  auto lr = reference.token_logprobs(traj);
  for (size_t t = 0; t < ls.size(); ++t) {
    a.values[t] = (ls[t] - lt[t]) + (lambda - 1.0) * (lr[t] - lt[t]);
  }
  return a;
}

/// Group-relative advantages: (r_i - mean) / max(std, eps) broadcast to all
/// tokens of rollout i. Bitwise-equal rewards produce exact zeros.
inline std::vector<AdvantageVector> grpo_advantages(
    const std::vector<double>& rewards, const std::vector<size_t>& lengths,
    double eps = 1e-8) {
  if (rewards.size() < 2) {
    throw GroupTooSmallError("GRPO group needs >= 2 rollouts, got " +
                             std::to_string(rewards.size()));
  }
  if (rewards.size() != lengths.size()) {
    throw LayoutMismatchError("grpo_advantages: rewards/lengths mismatch");
  }
  bool all_equal = true;
  for (double r : rewards) all_equal = all_equal && (r == rewards[0]);

  double mean = 0.0, sd = 0.0;
  if (!all_equal) {
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(rewards.size());
    for (double r : rewards) sd += (r - mean) * (r - mean);
    sd = std::sqrt(sd / static_cast<double>(rewards.size()));
  }

  std::vector<AdvantageVector> out(rewards.size());
  for (size_t i = 0; i < rewards.size(); ++i) {
    double a = all_equal ? 0.0 : (rewards[i] - mean) / std::max(sd, eps);
    out[i].variant = AdvantageVariant::Grpo;
    out[i].values.assign(lengths[i], a);
  }
  return out;
}

// ============================================================================
// Gradients
// ============================================================================

namespace detail {
/// Adds coeff * grad_theta log pi(y_t | ctx) for a tabular softmax policy:
/// the slot's row receives coeff * (onehot(y_t) - softmax(logits)).
inline void accumulate_score(const TablePolicy& policy, PromptId prompt,
                             std::span<const TokenId> ctx, TokenId token,
                             double coeff, std::vector<double>& grad) {
  size_t slot = policy.slot_or_throw(prompt, ctx);
  auto p = policy.distribution(prompt, ctx);
  size_t base = slot * static_cast<size_t>(policy.vocab().size);
  for (int b = 0; b < policy.vocab().size; ++b) {
    double indicator = (b == token) ? 1.0 : 0.0;
    grad[base + b] += coeff * (indicator - p[b]);
  }
}
}  // namespace detail

/**
 * REINFORCE-style estimator: sum_t A_t * grad log pi_theta(y_t | x, y_<t)
 * accumulated over all tokens of all trajectories and averaged over the
 * trajectory count (per-token averaging available for sensitivity runs).
 */
inline GradientVector policy_gradient(const TablePolicy& student,
                                      const std::vector<Trajectory>& trajs,
                                      const std::vector<AdvantageVector>& advs,
                                      GradientSign sign,
                                      bool average_per_token = false) {
  if (trajs.size() != advs.size()) {
    throw LayoutMismatchError("policy_gradient: trajectories/advantages mismatch");
  }
  GradientVector g;
  g.values.assign(student.num_params(), 0.0);
  size_t token_count = 0;
  for (size_t i = 0; i < trajs.size(); ++i) {
    const auto& traj = trajs[i];
    const auto& a = advs[i].values;
    if (a.size() != static_cast<size_t>(traj.length())) {
      throw LayoutMismatchError("policy_gradient: advantage length mismatch");
    }
    for (int t = 0; t < traj.length(); ++t) {
      auto ctx = context_at(traj.tokens, t, student.context_order());
      detail::accumulate_score(student, traj.prompt_id, ctx, traj.tokens[t],
                               a[t], g.values);
      ++token_count;
    }
  }
  double denom = average_per_token ? std::max<size_t>(token_count, 1)
                                   : std::max<size_t>(trajs.size(), 1);
  double scale = 1.0 / static_cast<double>(denom);
  if (sign == GradientSign::Maximize) scale = -scale;
  for (double& v : g.values) v *= scale;
  return g;
}

// ============================================================================
// Oracles
// ============================================================================

/**
 * Exact expectation of the per-trajectory estimator contribution:
 * sum_y pi_theta(y) * sum_t A_t(y) grad log pi_theta(y_t | y_<t).
 * Replaces the Monte-Carlo expectation by full enumeration.
 */
inline GradientVector expected_gradient_oracle(
    const TablePolicy& student, const TablePolicy& teacher,
    const TablePolicy& reference, double lambda, AdvantageVariant variant,
    PromptId prompt, int horizon, uint64_t cap = kDefaultEnumCap) {
  auto ds = sequence_distribution(student, prompt, horizon, cap);
  GradientVector g;
  g.values.assign(student.num_params(), 0.0);
  for (size_t i = 0; i < ds.seqs.size(); ++i) {
    const auto& y = ds.seqs[i];
    double w = std::exp(ds.logp[i]);
    AdvantageVector a;
    switch (variant) {
      case AdvantageVariant::OpdFull:
        a = opd_advantages_full(student, teacher, y);
        break;
      case AdvantageVariant::OpdD0:
        a = opd_advantages_discount0(student, teacher, y);
        break;
      case AdvantageVariant::Gopd:
        a = gopd_advantages(student, teacher, reference, lambda, y);
        break;
      case AdvantageVariant::Grpo:
        throw ConfigError("expected_gradient_oracle: grpo is sample-based");
    }
    for (int t = 0; t < y.length(); ++t) {
      auto ctx = context_at(y.tokens, t, student.context_order());
      detail::accumulate_score(student, y.prompt_id, ctx, y.tokens[t],
                               w * a.values[t], g.values);
    }
  }
  return g;
}

/**
 * Enumerated expectation of one dropped cross term of the full gradient:
 * E_y[ delta_{t'}(y) * grad log pi_theta(y_{t}|y_<t) ] for a fixed pair
 * t' < t (0-indexed), restricted to sequences long enough to have position
 * t. The expectation is exactly zero; the suite asserts it numerically.
 */
inline GradientVector cross_term_expectation(const TablePolicy& student,
                                             const TablePolicy& teacher,
                                             int t_prime, int t,
                                             PromptId prompt, int horizon,
                                             uint64_t cap = kDefaultEnumCap) {
  if (t_prime >= t) throw ConfigError("cross term requires t' < t");
  auto ds = sequence_distribution(student, prompt, horizon, cap);
  GradientVector g;
  g.values.assign(student.num_params(), 0.0);
  for (size_t i = 0; i < ds.seqs.size(); ++i) {
    const auto& y = ds.seqs[i];
    if (y.length() <= t) continue;
    double w = std::exp(ds.logp[i]);
    auto ctx_tp = context_at(y.tokens, t_prime, student.context_order());
    double delta =
        student.logprob_token(y.prompt_id, ctx_tp, y.tokens[t_prime]) -
        teacher.logprob_token(y.prompt_id, ctx_tp, y.tokens[t_prime]);
    auto ctx_t = context_at(y.tokens, t, student.context_order());
    detail::accumulate_score(student, y.prompt_id, ctx_t, y.tokens[t],
                             w * delta, g.values);
  }
  return g;
}

/// Central differences per coordinate of a trainable policy's parameters.
inline GradientVector finite_difference_gradient(
    const std::function<double(const TablePolicy&)>& objective_fn,
    TablePolicy& policy, double step = 1e-6) {
  if (step <= 0.0) throw ConfigError("finite difference step must be > 0");
  GradientVector g;
  g.values.assign(policy.num_params(), 0.0);
  auto& params = policy.mutable_params();
  for (size_t i = 0; i < params.size(); ++i) {
    double saved = params[i];
    params[i] = saved + step;
    double up = objective_fn(policy);
    params[i] = saved - step;
    double down = objective_fn(policy);
    params[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteError("finite_difference_gradient: objective non-finite");
    }
    g.values[i] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace opdlab

#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file divergence.hpp
 * @brief Exact sequence-space quantities by full enumeration: reverse KL,
 *        both objective forms, total variation, and the closed-form optimal
 *        student (normalized geometric mixture of teacher and reference).
 *
 * Nothing in this module samples. Every expectation is an exact sum over the
 * enumerated sequence space, so these values serve as ground truth for the
 * stochastic training paths.
 *
 * Support convention: sequence probabilities below kSupportEps are treated
 * as "outside the support" and trip SupportMismatchError where positive mass
 * is required; they are never clamped.
 */

#include <cmath>
#include <string>
#include <vector>

#include "opdlab/common.hpp"
#include "opdlab/enumerate.hpp"
#include "opdlab/policy.hpp"

namespace opdlab {

enum class ObjectiveForm { Opd, GopdForm1, GopdForm2 };

struct ObjectiveValue {
  double value = 0.0;
  ObjectiveForm form = ObjectiveForm::Opd;
  double lambda = 1.0;
};

namespace detail {
inline bool in_support(double logp) { return logp >= std::log(kSupportEps); }

inline void require_support(double logp_needed, const char* which,
                            const Trajectory& y) {
  if (!in_support(logp_needed)) {
    std::string toks;
    for (TokenId t : y.tokens) toks += std::to_string(t) + " ";
    throw SupportMismatchError(std::string(which) +
                               " has no support on sequence [" + toks + "]");
  }
}

inline double logsumexp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}
}  // namespace detail

/// D_KL(p || q) = sum_y p(y) [log p(y) - log q(y)], exact over enumeration.
/// Throws SupportMismatchError when q lacks support where p has mass.
inline double exact_reverse_kl(const TablePolicy& p, const TablePolicy& q,
                               PromptId prompt, int horizon,
                               uint64_t cap = kDefaultEnumCap) {
  auto dp = sequence_distribution(p, prompt, horizon, cap);
  double kl = 0.0;
  for (size_t i = 0; i < dp.seqs.size(); ++i) {
    double lp = dp.logp[i];
    if (!detail::in_support(lp)) continue;  // zero mass contributes nothing
    double lq = q.logprob_sequence(dp.seqs[i]);
    detail::require_support(lq, "q", dp.seqs[i]);
    kl += std::exp(lp) * (lp - lq);
  }
  return kl;
}

/// Total variation distance (1/2) sum_y |p(y) - q(y)|, in [0, 1].
inline double tv_distance(const TablePolicy& p, const TablePolicy& q,
                          PromptId prompt, int horizon,
                          uint64_t cap = kDefaultEnumCap) {
  auto seqs = enumerate_sequences(p.vocab(), horizon, prompt, cap);
  double acc = 0.0;
  for (const auto& y : seqs) {
    acc += std::abs(std::exp(p.logprob_sequence(y)) -
                    std::exp(q.logprob_sequence(y)));
  }
  return 0.5 * acc;
}

/// First objective form: E_{y~student}[ lambda * log(pi*/pi_ref) ]
///                       - D_KL(student || reference).
inline ObjectiveValue objective_gopd_form1(const TablePolicy& student,
                                           const TablePolicy& teacher,
                                           const TablePolicy& reference,
                                           double lambda, PromptId prompt,
                                           int horizon,
                                           uint64_t cap = kDefaultEnumCap) {
  auto ds = sequence_distribution(student, prompt, horizon, cap);
  double acc = 0.0;
  for (size_t i = 0; i < ds.seqs.size(); ++i) {
    double ls = ds.logp[i];
    if (!detail::in_support(ls)) continue;
    double lt = teacher.logprob_sequence(ds.seqs[i]);
    double lr = reference.logprob_sequence(ds.seqs[i]);
    detail::require_support(lt, "teacher", ds.seqs[i]);
    detail::require_support(lr, "reference", ds.seqs[i]);
    acc += std::exp(ls) * (lambda * (lt - lr) - (ls - lr));
  }
  return ObjectiveValue{acc, ObjectiveForm::GopdForm1, lambda};
}

/// Equivalent form: E_{y~student}[ (lambda-1) * log(pi*/pi_ref) ]
///                  - D_KL(student || teacher).
inline ObjectiveValue objective_gopd_form2(const TablePolicy& student,
                                           const TablePolicy& teacher,
                                           const TablePolicy& reference,
                                           double lambda, PromptId prompt,
                                           int horizon,
                                           uint64_t cap = kDefaultEnumCap) {
  auto ds = sequence_distribution(student, prompt, horizon, cap);
  double acc = 0.0;
  for (size_t i = 0; i < ds.seqs.size(); ++i) {
    double ls = ds.logp[i];
    if (!detail::in_support(ls)) continue;
    double lt = teacher.logprob_sequence(ds.seqs[i]);
    double lr = reference.logprob_sequence(ds.seqs[i]);
    detail::require_support(lt, "teacher", ds.seqs[i]);
    detail::require_support(lr, "reference", ds.seqs[i]);
    acc += std::exp(ls) * ((lambda - 1.0) * (lt - lr) - (ls - lt));
  }
  return ObjectiveValue{acc, ObjectiveForm::GopdForm2, lambda};
}

/**
 * Normalized geometric mixture: the distribution proportional to
 * pi*(y)^lambda * pi_ref(y)^(1-lambda) over the enumerated sequence space,
 * rendered as a full-prefix tabular policy by exact conditional
 * factorization (sequence-level mixing first, conditionals second; the two
 * operations do not commute).
 *
 * lambda=0 reproduces the reference, lambda=1 the teacher.
 */
inline TablePolicy geometric_mixture(const TablePolicy& teacher,
                                     const TablePolicy& reference,
                                     double lambda, PromptId prompt,
                                     int horizon,
                                     uint64_t cap = kDefaultEnumCap) {
  if (!(teacher.vocab() == reference.vocab())) {
    throw LayoutMismatchError("geometric_mixture: vocab mismatch");
  }
  const Vocab& vocab = teacher.vocab();
  auto seqs = enumerate_sequences(vocab, horizon, prompt, cap);

  std::vector<double> logw(seqs.size());
  for (size_t i = 0; i < seqs.size(); ++i) {
    double lt = teacher.logprob_sequence(seqs[i]);
    double lr = reference.logprob_sequence(seqs[i]);
    detail::require_support(lt, "teacher", seqs[i]);
    detail::require_support(lr, "reference", seqs[i]);
    logw[i] = lambda * lt + (1.0 - lambda) * lr;
    if (!std::isfinite(logw[i])) {
      throw UnderflowError("geometric mixture weight is non-finite at lambda=" +
                           fmt_double(lambda));
    }
  }
  double logz = detail::logsumexp(logw);
  if (!std::isfinite(logz)) {
    throw UnderflowError("geometric mixture normalizer underflowed");
  }
  for (double& lw : logw) lw -= logz;

  // Factorize into exact conditionals over every non-EOS prefix. mass(c.a)
  // aggregates: the exact sequence c+EOS when a is EOS, the truncated
  // sequence c.a when it reaches the horizon, and all continuations
  // otherwise.
  TablePolicy mix = TablePolicy::uniform(vocab, horizon, horizon, {prompt},
                                         PolicyKind::SoftmaxTrainable,
                                         PolicyRole::Teacher);
  std::vector<double> cond(static_cast<size_t>(vocab.size));
  for (size_t slot = 0; slot < mix.num_contexts(); ++slot) {
    const auto& key = mix.slots()[slot];
    const auto& prefix = key.ctx;
    for (TokenId a = 0; a < vocab.size; ++a) {
      std::vector<double> member_logp;
      for (size_t i = 0; i < seqs.size(); ++i) {
        const auto& y = seqs[i].tokens;
        if (y.size() <= prefix.size()) continue;
        if (!std::equal(prefix.begin(), prefix.end(), y.begin())) continue;
        if (y[prefix.size()] != a) continue;
        member_logp.push_back(logw[i]);
      }
      cond[a] = detail::logsumexp(member_logp);
      if (std::isnan(cond[a])) {
        throw UnderflowError("geometric mixture branch mass is NaN");
      }
    }
    // Normalize the branch masses into conditional log-probabilities.
    double branch_total = detail::logsumexp(cond);
    if (!std::isfinite(branch_total)) {
      throw UnderflowError("geometric mixture prefix mass underflowed");
    }
    for (double& c : cond) c -= branch_total;
    mix.set_logits(slot, cond);
  }
  return mix.frozen_copy(PolicyRole::Teacher);
}

}  // namespace opdlab

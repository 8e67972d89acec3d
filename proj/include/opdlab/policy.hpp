#pragma once

// SPDX-License-Identifier: Apache-2.0

/**
 * @file policy.hpp
 * @brief Autoregressive table policies over (prompt, context-window) keys.
 *
 * A policy maps (prompt_id, last-k generated tokens) to a logit vector over
 * the vocabulary; next-token distributions are softmax with max-subtraction.
 * Two kinds share one representation:
 * - tabular-frozen: immutable snapshot (teachers, references, oracles);
 * - softmax-trainable: flat parameter vector, lazily extensible.
 *
 * The parameter layout is the insertion order of context slots; gradients and
 * optimizer moments align with it index-for-index, and serialization
 * preserves it so checkpoints restore bit-exact state.
 */

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "opdlab/common.hpp"
#include "opdlab/vocab.hpp"

namespace opdlab {

enum class PolicyKind { TabularFrozen, SoftmaxTrainable };
enum class PolicyRole { Student, Teacher, Reference, TeacherBase, StudentBase };

inline const char* role_name(PolicyRole r) {
  switch (r) {
    case PolicyRole::Student: return "student";
    case PolicyRole::Teacher: return "teacher";
    case PolicyRole::Reference: return "reference";
    case PolicyRole::TeacherBase: return "teacher-base";
    case PolicyRole::StudentBase: return "student-base";
  }
  return "?";
}

struct ContextKey {
  PromptId prompt_id = 0;
  std::vector<TokenId> ctx;

  friend bool operator==(const ContextKey&, const ContextKey&) = default;
};

struct ContextKeyHash {
  size_t operator()(const ContextKey& k) const {
    uint64_t h = splitmix64(static_cast<uint64_t>(k.prompt_id));
    for (TokenId t : k.ctx) h = splitmix64(h ^ static_cast<uint64_t>(t + 1));
    return static_cast<size_t>(h);
  }
};

/// Context window for generation position t of a trajectory: the last
/// min(k, t) tokens preceding position t.
inline std::span<const TokenId> context_at(const std::vector<TokenId>& tokens,
                                           int t, int context_order) {
  int from = std::max(0, t - context_order);
  return std::span<const TokenId>(tokens.data() + from,
                                  static_cast<size_t>(t - from));
}

class TablePolicy {
 public:
  TablePolicy() = default;
  TablePolicy(Vocab vocab, int context_order, PolicyKind kind, PolicyRole role)
      : vocab_(vocab), context_order_(context_order), kind_(kind), role_(role) {
    if (context_order_ < 0) throw ConfigError("context_order must be >= 0");
  }

  /// Policy with every reachable context pre-populated at logits 0 (uniform).
  /// Reachable contexts are non-EOS token strings of length 0..min(k, h-1).
  static TablePolicy uniform(Vocab vocab, int context_order, int horizon,
                             const std::vector<PromptId>& prompts,
                             PolicyKind kind = PolicyKind::SoftmaxTrainable,
                             PolicyRole role = PolicyRole::Student) {
    TablePolicy p(vocab, context_order, kind, role);
    int max_len = std::min(context_order, horizon - 1);
    std::vector<TokenId> ctx;
    for (PromptId pid : prompts) p.populate_rec(pid, ctx, max_len);
    return p;
  }

  const Vocab& vocab() const { return vocab_; }
  int context_order() const { return context_order_; }
  PolicyKind kind() const { return kind_; }
  PolicyRole role() const { return role_; }
  void set_role(PolicyRole r) { role_ = r; }
  uint64_t version() const { return version_; }

  size_t num_contexts() const { return slots_.size(); }
  size_t num_params() const { return logits_.size(); }
  const std::vector<ContextKey>& slots() const { return slots_; }
  const std::vector<double>& params() const { return logits_; }

  bool frozen() const { return kind_ == PolicyKind::TabularFrozen; }

  /// Slot index for a context, or npos when absent. Lookups never touch
  /// shared mutable state; concurrent reads of a frozen policy are safe.
  static constexpr size_t npos = static_cast<size_t>(-1);
  size_t find_slot(PromptId prompt, std::span<const TokenId> ctx) const {
    ContextKey key{prompt, {ctx.begin(), ctx.end()}};
    auto it = index_.find(key);
    return it == index_.end() ? npos : it->second;
  }

  size_t slot_or_throw(PromptId prompt, std::span<const TokenId> ctx) const {
    size_t s = find_slot(prompt, ctx);
    if (s == npos) {
      throw MissingContextError("no table entry for prompt " +
                                std::to_string(prompt) + ", context [" +
                                ctx_to_string(ctx) + "]");
    }
    return s;
  }

  /// Adds a context with uniform (zero) logits if absent. Frozen policies
  /// refuse; they only report the context as missing.
  size_t ensure_context(PromptId prompt, std::span<const TokenId> ctx) {
    size_t s = find_slot(prompt, ctx);
    if (s != npos) return s;
    if (frozen()) {
      throw MissingContextError("frozen policy lacks context for prompt " +
                                std::to_string(prompt) + ", context [" +
                                ctx_to_string(ctx) + "]");
    }
    return add_slot(prompt, ctx);
  }

  std::span<const double> logits(size_t slot) const {
    return std::span<const double>(logits_.data() + slot * vocab_.size,
                                   static_cast<size_t>(vocab_.size));
  }

  /// Mutable flat parameter view; rejected on frozen policies.
  std::vector<double>& mutable_params() {
    require_trainable();
    ++version_;
    return logits_;
  }

  void set_logits(size_t slot, std::span<const double> v) {
    if (v.size() != static_cast<size_t>(vocab_.size)) {
      throw LayoutMismatchError("logit vector length != vocab size");
    }
    require_trainable();
    std::copy(v.begin(), v.end(), logits_.begin() + slot * vocab_.size);
    ++version_;
  }

  void set_logits(size_t slot, std::initializer_list<double> v) {
    set_logits(slot, std::span<const double>(v.begin(), v.size()));
  }

  /// Log softmax of the slot's logits at `token`.
  double logprob_at_slot(size_t slot, TokenId token) const {
    auto l = logits(slot);
    double m = *std::max_element(l.begin(), l.end());
    double sum = 0.0;
    for (double v : l) sum += std::exp(v - m);
    return l[token] - m - std::log(sum);
  }

  double logprob_token(PromptId prompt, std::span<const TokenId> ctx,
                       TokenId token) const {
    if (!vocab_.valid_token(token)) throw ConfigError("token out of range");
    return logprob_at_slot(slot_or_throw(prompt, ctx), token);
  }

  /// Next-token probabilities for a context.
  std::vector<double> distribution(PromptId prompt,
                                   std::span<const TokenId> ctx) const {
    size_t slot = slot_or_throw(prompt, ctx);
    auto l = logits(slot);
    std::vector<double> p(l.size());
    double m = *std::max_element(l.begin(), l.end());
    double sum = 0.0;
    for (size_t i = 0; i < l.size(); ++i) {
      p[i] = std::exp(l[i] - m);
      sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
  }

  /// Per-position log-probabilities of a trajectory's tokens.
  std::vector<double> token_logprobs(const Trajectory& traj) const {
    std::vector<double> out(traj.tokens.size());
    for (int t = 0; t < traj.length(); ++t) {
      auto ctx = context_at(traj.tokens, t, context_order_);
      out[t] = logprob_token(traj.prompt_id, ctx, traj.tokens[t]);
    }
    return out;
  }

  double logprob_sequence(const Trajectory& traj) const {
    double sum = 0.0;
    for (int t = 0; t < traj.length(); ++t) {
      auto ctx = context_at(traj.tokens, t, context_order_);
      sum += logprob_token(traj.prompt_id, ctx, traj.tokens[t]);
    }
    return sum;
  }

  /// Shannon entropy (nats) of the next-token distribution at a context.
  double token_entropy(PromptId prompt, std::span<const TokenId> ctx) const {
    auto p = distribution(prompt, ctx);
    double h = 0.0;
    for (double v : p) {
      if (v > 0.0) h -= v * std::log(v);
    }
    return h;
  }

  /// On-policy rollout: tokens drawn sequentially until EOS or horizon.
  Trajectory sample_trajectory(PromptId prompt, int horizon, Rng& rng) const {
    Trajectory traj;
    traj.prompt_id = prompt;
    for (int t = 0; t < horizon; ++t) {
      auto ctx = context_at(traj.tokens, t, context_order_);
      auto p = distribution(prompt, ctx);
      double u = rng.uniform();
      TokenId pick = vocab_.size - 1;
      double cum = 0.0;
      for (int b = 0; b < vocab_.size; ++b) {
        cum += p[b];
        if (u < cum) {
          pick = b;
          break;
        }
      }
      traj.tokens.push_back(pick);
      if (vocab_.is_eos(pick)) break;
    }
    return traj;
  }

  Trajectory sample_trajectory(PromptId prompt, int horizon,
                               uint64_t rng_seed) const {
    Rng rng(rng_seed);
    return sample_trajectory(prompt, horizon, rng);
  }

  /// Deterministic argmax rollout; ties break toward the lowest token id.
  Trajectory greedy_trajectory(PromptId prompt, int horizon) const {
    Trajectory traj;
    traj.prompt_id = prompt;
    for (int t = 0; t < horizon; ++t) {
      auto ctx = context_at(traj.tokens, t, context_order_);
      size_t slot = slot_or_throw(prompt, ctx);
      auto l = logits(slot);
      TokenId best = 0;
      for (int b = 1; b < vocab_.size; ++b) {
        if (l[b] > l[best]) best = b;
      }
      traj.tokens.push_back(best);
      if (vocab_.is_eos(best)) break;
    }
    return traj;
  }

  /// Fills every slot with logits drawn uniformly from [-scale, scale].
  void randomize(Rng& rng, double scale = 2.0) {
    require_trainable();
    for (double& v : logits_) v = rng.uniform(-scale, scale);
    ++version_;
  }

  TablePolicy frozen_copy(PolicyRole role) const {
    TablePolicy p = *this;
    p.kind_ = PolicyKind::TabularFrozen;
    p.role_ = role;
    return p;
  }

  TablePolicy trainable_copy(PolicyRole role) const {
    TablePolicy p = *this;
    p.kind_ = PolicyKind::SoftmaxTrainable;
    p.role_ = role;
    return p;
  }

  bool same_layout(const TablePolicy& other) const {
    return vocab_ == other.vocab_ && context_order_ == other.context_order_ &&
           slots_ == other.slots_;
  }

  // --------------------------------------------------------------------------
  // Serialization: line-oriented, exact round-trip.
  //   policy v1 vocab=<n> eos=<id> order=<k>
  //   <prompt_id> <ctx tokens comma-separated or "-"> <logits space-separated>
  // --------------------------------------------------------------------------

  void save(std::ostream& os) const {
    os << "policy v1 vocab=" << vocab_.size << " eos=" << vocab_.eos_id
       << " order=" << context_order_ << "\n";
    for (size_t s = 0; s < slots_.size(); ++s) {
      os << slots_[s].prompt_id << ' ' << ctx_to_string(slots_[s].ctx);
      auto l = logits(s);
      for (double v : l) os << ' ' << fmt_double(v);
      os << "\n";
    }
  }

  std::string save_string() const {
    std::ostringstream os;
    save(os);
    return os.str();
  }

  static TablePolicy load(std::istream& is,
                          PolicyKind kind = PolicyKind::TabularFrozen,
                          PolicyRole role = PolicyRole::Teacher) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("policy: empty stream");
    int vsize = 0, eos = -1, order = -1;
    {
      std::istringstream hs(line);
      std::string magic, ver, kv;
      hs >> magic >> ver;
      if (magic != "policy" || ver != "v1") {
        throw ConfigError("policy: bad header '" + line + "'");
      }
      while (hs >> kv) {
        auto pos = kv.find('=');
        if (pos == std::string::npos) throw ConfigError("policy: bad header field");
        std::string key = kv.substr(0, pos);
        long long val = parse_int(kv.substr(pos + 1));
        if (key == "vocab") vsize = static_cast<int>(val);
        else if (key == "eos") eos = static_cast<TokenId>(val);
        else if (key == "order") order = static_cast<int>(val);
        else throw ConfigError("policy: unknown header field '" + key + "'");
      }
    }
    TablePolicy p(Vocab(vsize, eos), order, kind, role);
    while (std::getline(is, line)) {
      if (line.empty()) break;  // blank line terminates the table block
      std::istringstream ls(line);
      std::string pid_s, ctx_s;
      ls >> pid_s >> ctx_s;
      PromptId pid = parse_int(pid_s);
      std::vector<TokenId> ctx = parse_ctx(ctx_s);
      std::vector<double> lg;
      lg.reserve(static_cast<size_t>(vsize));
      std::string tok;
      while (ls >> tok) lg.push_back(parse_double(tok));
      if (lg.size() != static_cast<size_t>(vsize)) {
        throw ConfigError("policy: context line has " +
                          std::to_string(lg.size()) + " logits, expected " +
                          std::to_string(vsize));
      }
      if (p.find_slot(pid, ctx) != npos) {
        throw ConfigError("policy: duplicate context line");
      }
      size_t slot = p.add_slot(pid, ctx);
      std::copy(lg.begin(), lg.end(), p.logits_.begin() + slot * vsize);
    }
    p.version_ = 0;
    return p;
  }

  static TablePolicy load_string(const std::string& text,
                                 PolicyKind kind = PolicyKind::TabularFrozen,
                                 PolicyRole role = PolicyRole::Teacher) {
    std::istringstream is(text);
    return load(is, kind, role);
  }

 private:
  void populate_rec(PromptId pid, std::vector<TokenId>& ctx, int remaining) {
    add_slot(pid, ctx);
    if (remaining == 0) return;
    for (TokenId t = 0; t < vocab_.size; ++t) {
      if (vocab_.is_eos(t)) continue;
      ctx.push_back(t);
      populate_rec(pid, ctx, remaining - 1);
      ctx.pop_back();
    }
  }

  size_t add_slot(PromptId prompt, std::span<const TokenId> ctx) {
    ContextKey key{prompt, {ctx.begin(), ctx.end()}};
    size_t slot = slots_.size();
    slots_.push_back(key);
    index_.emplace(std::move(key), slot);
    logits_.resize(logits_.size() + static_cast<size_t>(vocab_.size), 0.0);
    ++version_;
    return slot;
  }

  void require_trainable() {
    if (frozen()) {
      throw ConfigError("frozen policy rejects parameter updates");
    }
  }

  static std::string ctx_to_string(std::span<const TokenId> ctx) {
    if (ctx.empty()) return "-";
    std::string s;
    for (size_t i = 0; i < ctx.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(ctx[i]);
    }
    return s;
  }

  static std::vector<TokenId> parse_ctx(const std::string& s) {
    std::vector<TokenId> ctx;
    if (s == "-") return ctx;
    size_t start = 0;
    while (start <= s.size()) {
      size_t comma = s.find(',', start);
      size_t end = comma == std::string::npos ? s.size() : comma;
      ctx.push_back(static_cast<TokenId>(parse_int(
          std::string_view(s).substr(start, end - start))));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return ctx;
  }

  Vocab vocab_{2, 1};
  int context_order_ = 0;
  PolicyKind kind_ = PolicyKind::TabularFrozen;
  PolicyRole role_ = PolicyRole::Teacher;
  std::vector<ContextKey> slots_;
  std::unordered_map<ContextKey, size_t, ContextKeyHash> index_;
  std::vector<double> logits_;
  uint64_t version_ = 0;
};

// ============================================================================
// Free-function forms of the core operations
// ============================================================================

inline double logprob_token(const TablePolicy& policy, PromptId prompt,
                            std::span<const TokenId> ctx, TokenId token) {
  return policy.logprob_token(prompt, ctx, token);
}

inline double logprob_sequence(const TablePolicy& policy,
                               const Trajectory& traj) {
  return policy.logprob_sequence(traj);
}

inline double token_entropy(const TablePolicy& policy, PromptId prompt,
                            std::span<const TokenId> ctx) {
  return policy.token_entropy(prompt, ctx);
}

inline Trajectory sample_trajectory(const TablePolicy& policy, PromptId prompt,
                                    int horizon, uint64_t rng_seed) {
  return policy.sample_trajectory(prompt, horizon, rng_seed);
}

}  // namespace opdlab

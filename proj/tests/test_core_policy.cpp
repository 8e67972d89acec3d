// SPDX-License-Identifier: Apache-2.0

// Token alphabets, trajectories, table policies: log-probabilities,
// sampling, entropy, enumeration, and the serialization round-trip.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <sstream>

#include "opdlab/enumerate.hpp"
#include "opdlab/policy.hpp"

using namespace opdlab;

namespace {

// Single-context policy over `logits.size()` tokens with EOS last; the only
// reachable context at horizon 1 is the empty one.
TablePolicy single_context_policy(const std::vector<double>& logits) {
  Vocab v(static_cast<int>(logits.size()),
          static_cast<TokenId>(logits.size()) - 1);
  TablePolicy p = TablePolicy::uniform(v, 0, 1, {0});
  p.set_logits(0, logits);
  return p;
}

// Independent softmax log-probability by plain summation, kept free of the
// max-subtraction trick the implementation uses.
double naive_log_softmax(const std::vector<double>& logits, size_t idx) {
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l);
  return std::log(std::exp(logits[idx]) / denom);
}

TablePolicy random_policy(Vocab v, int order, int horizon, uint64_t seed,
                          const std::vector<PromptId>& prompts = {0}) {
  TablePolicy p = TablePolicy::uniform(v, order, horizon, prompts);
  Rng rng(seed);
  p.randomize(rng);
  return p;
}

}  // namespace

TEST_CASE("logprob_token basics") {
  SECTION("uniform policy over size-4 vocab") {
    Vocab v(4, 3);
    auto p = TablePolicy::uniform(v, 3, 3, {0});
    std::vector<TokenId> ctx{0, 1};
    for (TokenId t = 0; t < 4; ++t) {
      REQUIRE(p.logprob_token(0, ctx, t) == Catch::Approx(std::log(0.25)));
    }
  }

  SECTION("symmetric two-token logits") {
    auto p = single_context_policy({0.0, 0.0});
    REQUIRE(p.logprob_token(0, {}, 0) == Catch::Approx(std::log(0.5)));
  }

  SECTION("logits (1,0) against a hand-rolled softmax") {
    auto p = single_context_policy({1.0, 0.0});
    double expected = naive_log_softmax({1.0, 0.0}, 0);
    REQUIRE(expected == Catch::Approx(-0.3132616875).epsilon(1e-9));
    REQUIRE(p.logprob_token(0, {}, 0) == Catch::Approx(expected).epsilon(1e-12));
  }

  SECTION("always non-positive") {
    auto p = random_policy(Vocab(3, 2), 2, 3, 11);
    for (const auto& y : enumerate_sequences(Vocab(3, 2), 3)) {
      for (int t = 0; t < y.length(); ++t) {
        auto ctx = context_at(y.tokens, t, 2);
        REQUIRE(p.logprob_token(0, ctx, y.tokens[t]) <= 0.0);
      }
    }
  }

  SECTION("unknown context is an error") {
    auto p = single_context_policy({0.0, 0.0});
    std::vector<TokenId> ctx{0};
    REQUIRE_THROWS_AS(p.logprob_token(0, ctx, 0), MissingContextError);
    REQUIRE_THROWS_AS(p.logprob_token(7, {}, 0), MissingContextError);
  }
}

TEST_CASE("logprob_sequence is the sum of token terms") {
  SECTION("length-1 trajectory") {
    auto p = single_context_policy({0.3, -0.4});
    Trajectory y{0, {0}};
    REQUIRE(p.logprob_sequence(y) == p.logprob_token(0, {}, 0));
  }

  SECTION("deterministic policy scores its greedy trajectory at 0") {
    Vocab v(3, 2);
    auto p = TablePolicy::uniform(v, 2, 3, {0});
    for (size_t s = 0; s < p.num_contexts(); ++s) {
      p.set_logits(s, {1e9, 0.0, 0.0});
    }
    auto y = p.greedy_trajectory(0, 3);
    REQUIRE(y.tokens == std::vector<TokenId>{0, 0, 0});
    REQUIRE(p.logprob_sequence(y) == 0.0);
  }

  SECTION("two uniform tokens") {
    Vocab v(2, 1);
    auto p = TablePolicy::uniform(v, 1, 2, {0});
    Trajectory y{0, {0, 1}};
    REQUIRE(p.logprob_sequence(y) ==
            Catch::Approx(2.0 * std::log(0.5)).epsilon(1e-14));
  }

  SECTION("matches left-to-right accumulation of token_logprobs") {
    auto p = random_policy(Vocab(4, 3), 3, 4, 23);
    for (const auto& y : enumerate_sequences(Vocab(4, 3), 4)) {
      auto per_token = p.token_logprobs(y);
      double sum = 0.0;
      for (double lp : per_token) sum += lp;
      REQUIRE(p.logprob_sequence(y) == sum);  // identical summation order
    }
  }
}

TEST_CASE("per-context probabilities sum to one") {
  auto p = random_policy(Vocab(5, 0), 2, 3, 37, {0, 1});
  for (size_t slot = 0; slot < p.num_contexts(); ++slot) {
    const auto& key = p.slots()[slot];
    double total = 0.0;
    for (TokenId t = 0; t < 5; ++t) {
      total += std::exp(p.logprob_token(key.prompt_id, key.ctx, t));
    }
    REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("sample_trajectory") {
  SECTION("degenerate distribution always emits the greedy sequence") {
    Vocab v(3, 2);
    auto p = TablePolicy::uniform(v, 2, 4, {0});
    for (size_t s = 0; s < p.num_contexts(); ++s) {
      p.set_logits(s, {0.0, 1e9, 0.0});
    }
    for (uint64_t seed : {1ull, 99ull, 12345ull}) {
      auto y = p.sample_trajectory(0, 4, seed);
      REQUIRE(y.tokens == std::vector<TokenId>{1, 1, 1, 1});
    }
  }

  SECTION("same seed, same trajectory") {
    auto p = random_policy(Vocab(4, 3), 3, 5, 7);
    for (uint64_t seed = 0; seed < 20; ++seed) {
      REQUIRE(p.sample_trajectory(0, 5, seed) ==
              p.sample_trajectory(0, 5, seed));
    }
  }

  SECTION("respects EOS and horizon invariants") {
    auto p = random_policy(Vocab(3, 1), 2, 4, 13);
    Rng rng(99);
    for (int i = 0; i < 200; ++i) {
      auto y = p.sample_trajectory(0, 4, rng);
      REQUIRE(trajectory_valid(y, Vocab(3, 1), 4));
    }
  }

  SECTION("empirical frequency matches softmax within 3 sigma") {
    auto p = single_context_policy({1.0, 0.0});
    double prob = std::exp(naive_log_softmax({1.0, 0.0}, 0));
    const int n = 100000;
    Rng rng(2024);
    int hits = 0;
    for (int i = 0; i < n; ++i) {
      if (p.sample_trajectory(0, 1, rng).tokens[0] == 0) ++hits;
    }
    double freq = static_cast<double>(hits) / n;
    double sigma = std::sqrt(prob * (1.0 - prob) / n);
    REQUIRE(std::abs(freq - prob) < 3.0 * sigma);
  }
}

TEST_CASE("enumerate_sequences") {
  SECTION("size 2, horizon 2: three sequences") {
    auto seqs = enumerate_sequences(Vocab(2, 1), 2);
    std::set<std::vector<TokenId>> got;
    for (const auto& y : seqs) got.insert(y.tokens);
    std::set<std::vector<TokenId>> want{{1}, {0, 1}, {0, 0}};
    REQUIRE(got == want);
    REQUIRE(seqs.size() == 3);
  }

  SECTION("size 2, horizon 3: four sequences") {
    REQUIRE(enumerate_sequences(Vocab(2, 1), 3).size() == 4);
    REQUIRE(count_sequences(Vocab(2, 1), 3) == 4);
  }

  SECTION("no duplicates, deterministic order") {
    auto a = enumerate_sequences(Vocab(4, 0), 3);
    auto b = enumerate_sequences(Vocab(4, 0), 3);
    REQUIRE(a == b);
    std::set<std::vector<TokenId>> uniq;
    for (const auto& y : a) uniq.insert(y.tokens);
    REQUIRE(uniq.size() == a.size());
  }

  SECTION("every sequence is EOS-terminated or horizon-truncated") {
    Vocab v(3, 0);
    for (const auto& y : enumerate_sequences(v, 4)) {
      REQUIRE(trajectory_valid(y, v, 4));
      bool terminated = y.terminated(v);
      REQUIRE((terminated || y.length() == 4));
    }
  }

  SECTION("probabilities over the enumerated set sum to one") {
    for (uint64_t seed : {3ull, 5ull, 8ull}) {
      auto p = random_policy(Vocab(3, 2), 4, 4, seed);
      double total = 0.0;
      for (const auto& y : enumerate_sequences(Vocab(3, 2), 4)) {
        total += std::exp(p.logprob_sequence(y));
      }
      REQUIRE(total == Catch::Approx(1.0).margin(1e-10));
    }
  }

  SECTION("cap exceeded is an error") {
    REQUIRE_THROWS_AS(enumerate_sequences(Vocab(10, 9), 12, 0, 1000),
                      EnumerationTooLargeError);
  }
}

TEST_CASE("token_entropy") {
  SECTION("uniform size-4 is ln 4") {
    Vocab v(4, 3);
    auto p = TablePolicy::uniform(v, 0, 1, {0});
    REQUIRE(p.token_entropy(0, {}) == Catch::Approx(std::log(4.0)));
  }

  SECTION("deterministic is 0") {
    auto p = single_context_policy({1e9, 0.0, 0.0});
    REQUIRE(p.token_entropy(0, {}) == 0.0);
  }

  SECTION("logits (1,0) against direct -sum p ln p") {
    auto p = single_context_policy({1.0, 0.0});
    double p0 = std::exp(naive_log_softmax({1.0, 0.0}, 0));
    double p1 = std::exp(naive_log_softmax({1.0, 0.0}, 1));
    double expected = -(p0 * std::log(p0) + p1 * std::log(p1));
    REQUIRE(p.token_entropy(0, {}) == Catch::Approx(expected).epsilon(1e-12));
  }

  SECTION("bounded by ln(vocab size)") {
    auto p = random_policy(Vocab(5, 4), 1, 2, 91);
    for (size_t slot = 0; slot < p.num_contexts(); ++slot) {
      const auto& key = p.slots()[slot];
      double h = p.token_entropy(key.prompt_id, key.ctx);
      REQUIRE(h >= 0.0);
      REQUIRE(h <= std::log(5.0) + 1e-12);
    }
  }
}

TEST_CASE("policy serialization round-trips exactly") {
  auto p = random_policy(Vocab(4, 3), 2, 3, 4242, {0, 5, 17});

  std::string text = p.save_string();
  auto q = TablePolicy::load_string(text, PolicyKind::SoftmaxTrainable,
                                    PolicyRole::Student);

  REQUIRE(q.vocab() == p.vocab());
  REQUIRE(q.context_order() == p.context_order());
  REQUIRE(q.slots() == p.slots());
  REQUIRE(q.params() == p.params());  // bitwise
  REQUIRE(q.save_string() == text);

  SECTION("header is the documented format") {
    REQUIRE(text.rfind("policy v1 vocab=4 eos=3 order=2\n", 0) == 0);
  }

  SECTION("bad input is rejected") {
    REQUIRE_THROWS_AS(TablePolicy::load_string("nonsense"), ConfigError);
    REQUIRE_THROWS_AS(
        TablePolicy::load_string("policy v1 vocab=2 eos=1 order=0\n0 - 1.0\n"),
        ConfigError);  // wrong logit count
  }
}

TEST_CASE("frozen policies reject parameter updates") {
  auto p = random_policy(Vocab(3, 2), 1, 2, 5);
  auto f = p.frozen_copy(PolicyRole::Teacher);
  REQUIRE_THROWS_AS(f.mutable_params(), ConfigError);
  REQUIRE_THROWS_AS(f.ensure_context(42, {}), MissingContextError);

  // Trainable policies expand lazily with uniform init instead.
  size_t before = p.num_contexts();
  size_t slot = p.ensure_context(42, {});
  REQUIRE(p.num_contexts() == before + 1);
  REQUIRE(p.logprob_token(42, {}, 0) == Catch::Approx(std::log(1.0 / 3.0)));
  REQUIRE(slot == before);
}

TEST_CASE("greedy tie-break picks the lowest token id") {
  auto p = single_context_policy({0.5, 0.5, 0.5});
  auto y = p.greedy_trajectory(0, 1);
  REQUIRE(y.tokens == std::vector<TokenId>{0});
}

#include "doctest.h"

#include <cmath>
#include <limits>
#include <map>

#include "mhgpo/policy.hpp"
#include "mhgpo/rng.hpp"

using namespace mhgpo;

namespace {

// Straight from the weight layout: features are [context | position | prev token (slot 0 = none)].
std::vector<double> oracle_logps(const PolicyParams& p, AgentId role, const std::vector<double>& ctx,
                                 const std::vector<Token>& seq) {
  const std::size_t F = p.context_dim + p.max_positions + p.vocab_size + 1;
  auto w = [&](std::size_t f, std::size_t j) { return p.weights[((role - 1) * F + f) * p.vocab_size + j]; };
  std::vector<double> out;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const std::size_t prev_slot = t == 0 ? 0 : static_cast<std::size_t>(seq[t - 1]) + 1;
    std::vector<long double> z(p.vocab_size);
    for (std::size_t j = 0; j < p.vocab_size; ++j) {
      long double s = 0;
      for (std::size_t f = 0; f < p.context_dim; ++f) s += ctx[f] * w(f, j);
      s += w(p.context_dim + t, j);
      s += w(p.context_dim + p.max_positions + prev_slot, j);
      z[j] = s;
    }
    long double norm = 0;
    for (std::size_t j = 0; j < p.vocab_size; ++j) {
      if (p.token_allowed(role, static_cast<Token>(j))) norm += std::exp(z[j]);
    }
    out.push_back(static_cast<double>(z[static_cast<std::size_t>(seq[t])] - std::log(norm)));
  }
  return out;
}

double oracle_sum(const PolicyParams& p, AgentId role, const std::vector<double>& ctx, const std::vector<Token>& seq) {
  double s = 0;
  for (double v : oracle_logps(p, role, ctx, seq)) s += v;
  return s;
}

PolicyParams random_params(Rng& rng, std::size_t roles, std::size_t ctx, std::size_t pos, std::size_t vocab) {
  auto p = PolicyParams::zeros(roles, ctx, pos, vocab);
  for (auto& w : p.weights) w = 2.0 * uniform01(rng) - 1.0;
  return p;
}

std::vector<double> random_context(Rng& rng, std::size_t n) {
  std::vector<double> c(n);
  for (auto& x : c) x = uniform_index(rng, 3);
  return c;
}

std::vector<Token> random_sequence(Rng& rng, std::size_t max_len, std::size_t vocab) {
  std::vector<Token> s(1 + uniform_index(rng, max_len));
  for (auto& t : s) t = static_cast<Token>(uniform_index(rng, vocab));
  return s;
}

}  // namespace

TEST_CASE("zero params give uniform log-probs") {
  const auto p = PolicyParams::zeros(2, 3, 4, 6);
  const std::vector<double> ctx{1, 0, 2};
  const auto lp = sequence_log_prob(p, 2, ctx, std::vector<Token>{0, 5, 3});
  for (double v : lp) CHECK(v == doctest::Approx(-std::log(6.0)).epsilon(1e-15));
}

TEST_CASE("hand softmax: logits (ln 3, 0)") {
  auto p = PolicyParams::zeros(1, 1, 1, 2);
  p.at(1, 0, 0) = std::log(3.0);
  const std::vector<double> ctx{1.0};
  CHECK(sequence_log_prob(p, 1, ctx, std::vector<Token>{0})[0] == doctest::Approx(std::log(0.75)).epsilon(1e-14));
  CHECK(sequence_log_prob(p, 1, ctx, std::vector<Token>{1})[0] == doctest::Approx(std::log(0.25)).epsilon(1e-14));
}

TEST_CASE("sequence_log_prob matches the layout oracle") {
  Rng rng(11);
  for (int c = 0; c < 40; ++c) {
    const auto p = random_params(rng, 3, 4, 5, 6);
    const auto ctx = random_context(rng, 4);
    const auto seq = random_sequence(rng, 5, 6);
    const AgentId role = static_cast<AgentId>(1 + uniform_index(rng, 3));
    const auto got = sequence_log_prob(p, role, ctx, seq);
    const auto want = oracle_logps(p, role, ctx, seq);
    for (std::size_t t = 0; t < seq.size(); ++t) CHECK(got[t] == doctest::Approx(want[t]).epsilon(1e-12));
  }
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(3);
  for (int c = 0; c < 100; ++c) {
    const auto p = random_params(rng, 2, 3, 4, 7);
    const auto ctx = random_context(rng, 3);
    std::optional<Token> prev;
    if (c % 2) prev = static_cast<Token>(uniform_index(rng, 7));
    const auto lp = log_softmax(step_logits(p, 1 + c % 2, ctx, c % 4, prev));
    double sum = 0;
    for (double v : lp) sum += std::exp(v);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("nucleus sets") {
  SUBCASE("uniform vocab 4 at 0.9 keeps all four") {
    const std::vector<double> pr{0.25, 0.25, 0.25, 0.25};
    CHECK(nucleus(pr, 0.9).size() == 4);
  }
  SUBCASE("a 0.95 token is the whole nucleus at 0.9") {
    const std::vector<double> pr{0.02, 0.95, 0.03};
    CHECK(nucleus(pr, 0.9) == std::vector<std::size_t>{1});
  }
  SUBCASE("top_n 1 keeps everything") {
    const std::vector<double> pr{0.7, 0.2, 0.1, 0.0};
    CHECK(nucleus(pr, 1.0).size() == 4);
  }
  SUBCASE("order is by probability, ties by id") {
    const std::vector<double> pr{0.3, 0.4, 0.3};
    CHECK(nucleus(pr, 0.6) == std::vector<std::size_t>{1, 0});
  }
}

TEST_CASE("a 0.95 token is sampled with certainty at top_n 0.9") {
  auto p = PolicyParams::zeros(1, 1, 1, 3);
  p.at(1, 0, 2) = std::log(0.95 / 0.025);  // probs 0.025, 0.025, 0.95
  const std::vector<double> ctx{1.0};
  SamplingConfig cfg{0.9, 1.0, 1, 99};
  Rng rng(5);
  for (int i = 0; i < 500; ++i) CHECK(sample_sequence(p, 1, ctx, cfg, rng).tokens[0] == 2);
}

TEST_CASE("top_n 1 samples the full softmax") {
  auto p = PolicyParams::zeros(1, 1, 1, 3);
  p.at(1, 0, 0) = std::log(5.0);
  p.at(1, 0, 1) = std::log(3.0);
  p.at(1, 0, 2) = std::log(2.0);
  const std::vector<double> ctx{1.0};
  SamplingConfig cfg{1.0, 1.0, 1, 99};
  Rng rng(9);
  std::map<Token, int> hits;
  const int n = 200000;
  for (int i = 0; i < n; ++i) ++hits[sample_sequence(p, 1, ctx, cfg, rng).tokens[0]];
  // 5 sigma of a binomial at n = 2e5 is under 0.006
  CHECK(std::abs(hits[0] / double(n) - 0.5) < 0.006);
  CHECK(std::abs(hits[1] / double(n) - 0.3) < 0.006);
  CHECK(std::abs(hits[2] / double(n) - 0.2) < 0.006);
}

TEST_CASE("sampled log-probs are full-softmax values and recompute bitwise") {
  Rng prng(21);
  for (int c = 0; c < 30; ++c) {
    const auto p = random_params(prng, 2, 3, 6, 5);
    const auto ctx = random_context(prng, 3);
    SamplingConfig cfg{0.5, 0.7, 6, 4};
    Rng rng(100 + c);
    const auto s = sample_sequence(p, 1 + c % 2, ctx, cfg, rng);
    REQUIRE(s.tokens.size() == s.logps.size());
    CHECK((s.tokens.size() == 6 || s.tokens.back() == 4));
    const auto again = sequence_log_prob(p, 1 + c % 2, ctx, s.tokens);
    for (std::size_t t = 0; t < s.tokens.size(); ++t) CHECK(again[t] == s.logps[t]);
    const auto oracle = oracle_logps(p, 1 + c % 2, ctx, s.tokens);
    for (std::size_t t = 0; t < s.tokens.size(); ++t) CHECK(s.logps[t] == doctest::Approx(oracle[t]).epsilon(1e-12));
  }
}

TEST_CASE("sampling is deterministic per seed") {
  Rng prng(2);
  const auto p = random_params(prng, 1, 2, 8, 5);
  const std::vector<double> ctx{1, 2};
  SamplingConfig cfg{0.9, 1.0, 8, 4};
  Rng a(77);
  Rng b(77);
  for (int i = 0; i < 20; ++i) {
    const auto x = sample_sequence(p, 1, ctx, cfg, a);
    const auto y = sample_sequence(p, 1, ctx, cfg, b);
    CHECK(x.tokens == y.tokens);
    CHECK(x.logps == y.logps);
  }
}

TEST_CASE("uniform policy single token gradient") {
  const std::size_t V = 5;
  const auto p = PolicyParams::zeros(1, 1, 1, V);
  const std::vector<double> ctx{1.0};
  const auto g = grad_log_prob(p, 1, ctx, std::vector<Token>{3});
  for (std::size_t j = 0; j < V; ++j) {
    const double want = j == 3 ? 1.0 - 1.0 / V : -1.0 / V;
    CHECK(g[p.index(1, 0, static_cast<Token>(j))] == doctest::Approx(want).epsilon(1e-15));
  }
}

TEST_CASE("expected score is zero") {
  Rng rng(4);
  const auto p = random_params(rng, 1, 3, 1, 6);
  const auto ctx = random_context(rng, 3);
  std::vector<double> acc(p.weights.size(), 0.0);
  for (Token t = 0; t < 6; ++t) {
    const double pr = std::exp(sequence_log_prob(p, 1, ctx, std::vector<Token>{t})[0]);
    const auto g = grad_log_prob(p, 1, ctx, std::vector<Token>{t});
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += pr * g[i];
  }
  for (double v : acc) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("grad_log_prob matches central differences") {
  Rng rng(2024);
  const double h = 1e-5;
  for (int c = 0; c < 50; ++c) {
    auto p = random_params(rng, 2, 3, 4, 5);
    const auto ctx = random_context(rng, 3);
    const auto seq = random_sequence(rng, 4, 5);
    const AgentId role = 1 + c % 2;
    const auto g = grad_log_prob(p, role, ctx, seq);
    double worst = 0;
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
      const double w0 = p.weights[i];
      p.weights[i] = w0 + h;
      const double up = oracle_sum(p, role, ctx, seq);
      p.weights[i] = w0 - h;
      const double down = oracle_sum(p, role, ctx, seq);
      p.weights[i] = w0;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::max(std::abs(fd), std::abs(g[i]))));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("weighted and logit gradients agree with grad_log_prob") {
  Rng rng(8);
  const auto p = random_params(rng, 1, 2, 3, 4);
  const auto ctx = random_context(rng, 2);
  const std::vector<Token> seq{2, 0, 3};
  const std::vector<double> ones{1, 1, 1};
  std::vector<double> acc(p.weights.size(), 0.0);
  accumulate_weighted_grad(p, 1, ctx, seq, ones, acc);
  const auto g = grad_log_prob(p, 1, ctx, seq);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(acc[i] == doctest::Approx(g[i]).epsilon(1e-12));

  // one position through the logit route: d log p(tok) / d logits = onehot - p
  const auto lp = log_softmax(step_logits(p, 1, ctx, 0, std::nullopt));
  std::vector<double> d(4);
  for (std::size_t j = 0; j < 4; ++j) d[j] = (j == 2 ? 1.0 : 0.0) - std::exp(lp[j]);
  std::vector<double> acc2(p.weights.size(), 0.0);
  accumulate_logit_grad(p, 1, ctx, 0, std::nullopt, d, acc2);
  const auto g1 = grad_log_prob(p, 1, ctx, std::vector<Token>{2});
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(acc2[i] == doctest::Approx(g1[i]).epsilon(1e-12));
}

TEST_CASE("apply_update") {
  const auto p = PolicyParams::zeros(1, 1, 1, 2);
  const std::vector<double> ones(p.weights.size(), 1.0);
  const std::vector<double> zeros(p.weights.size(), 0.0);
  CHECK(apply_update(p, zeros, 0.3).weights == p.weights);
  CHECK(apply_update(p, ones, 0.0).weights == p.weights);
  const auto q = apply_update(p, ones, 0.1);
  for (double w : q.weights) CHECK(w == doctest::Approx(0.1));
  for (double w : p.weights) CHECK(w == 0.0);

  auto bad = ones;
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(apply_update(p, bad, 0.1));
  CHECK_THROWS(apply_update(p, std::vector<double>(3, 0.0), 0.1));
}

TEST_CASE("errors") {
  auto p = PolicyParams::zeros(1, 2, 3, 4);
  const std::vector<double> ctx{0, 1};
  CHECK_THROWS_AS(sequence_log_prob(p, 1, ctx, std::vector<Token>{4}), std::out_of_range);
  CHECK_THROWS_AS(grad_log_prob(p, 1, ctx, std::vector<Token>{0, 7}), std::out_of_range);
  CHECK_THROWS(sequence_log_prob(p, 1, std::vector<double>{1}, std::vector<Token>{0}));
  CHECK_THROWS(sequence_log_prob(p, 2, ctx, std::vector<Token>{0}));
  p.at(1, 1, 2) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(step_logits(p, 1, ctx, 0, std::nullopt), std::domain_error);
  Rng rng(1);
  CHECK_THROWS_AS(sample_sequence(p, 1, ctx, SamplingConfig{0.9, 1.0, 3, 3}, rng), std::domain_error);
  CHECK_THROWS(validate_sampling(SamplingConfig{0.0, 1.0, 3, 0}));
  CHECK_THROWS(validate_sampling(SamplingConfig{1.1, 1.0, 3, 0}));
  CHECK_THROWS(validate_sampling(SamplingConfig{0.9, 0.0, 3, 0}));
  CHECK_THROWS(validate_sampling(SamplingConfig{0.9, 1.0, 0, 0}));
}

TEST_CASE("role alphabets mask tokens out") {
  Rng rng(31);
  auto p = random_params(rng, 2, 2, 4, 6);
  p.allowed = {{}, {true, false, true, false, false, true}};
  const std::vector<double> ctx{1, 1};
  SamplingConfig cfg{1.0, 1.0, 4, 5};
  for (int i = 0; i < 300; ++i) {
    for (Token t : sample_sequence(p, 2, ctx, cfg, rng).tokens) CHECK((t == 0 || t == 2 || t == 5));
  }
  CHECK_THROWS_AS(sequence_log_prob(p, 2, ctx, std::vector<Token>{1}), std::out_of_range);
  CHECK_NOTHROW(sequence_log_prob(p, 1, ctx, std::vector<Token>{1}));

  const std::vector<Token> seq{2, 0, 5};
  const auto g = grad_log_prob(p, 2, ctx, seq);
  const double h = 1e-5;
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    const double w0 = p.weights[i];
    p.weights[i] = w0 + h;
    const double up = oracle_sum(p, 2, ctx, seq);
    p.weights[i] = w0 - h;
    const double down = oracle_sum(p, 2, ctx, seq);
    p.weights[i] = w0;
    CHECK(g[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("greedy decoding") {
  auto p = PolicyParams::zeros(1, 1, 4, 3);
  const std::vector<double> ctx{1.0};
  // ties go to the lowest id
  CHECK(greedy_sequence(p, 1, ctx, 4, 2) == std::vector<Token>{0, 0, 0, 0});
  p.at(1, p.position_feature(1), 2) = 1.0;
  CHECK(greedy_sequence(p, 1, ctx, 4, 2) == std::vector<Token>{0, 2});
}

#include "doctest.h"

#include <cmath>
#include <map>

#include "mhgpo/advantage.hpp"
#include "mhgpo/rng.hpp"

using namespace mhgpo;

namespace {

std::vector<GroupedReward> one_group(const std::vector<double>& r, std::size_t q = 0, AgentId a = 1) {
  std::vector<GroupedReward> out;
  for (double x : r) out.push_back({GroupKey::per_agent(q, a), x});
  return out;
}

// Two-pass textbook mean / population std in long double.
std::vector<double> oracle_normalize(const std::vector<double>& r) {
  long double m = 0;
  for (double x : r) m += x;
  m /= static_cast<long double>(r.size());
  long double v = 0;
  for (double x : r) v += (x - m) * (x - m);
  v /= static_cast<long double>(r.size());
  std::vector<double> out;
  for (double x : r) out.push_back(static_cast<double>((x - m) / std::sqrt(v)));
  return out;
}

}  // namespace

TEST_CASE("binary group normalizes to +-1") {
  const auto adv = group_advantages(one_group({1, 0, 1, 0}));
  REQUIRE(adv.size() == 4);
  const double want[] = {1, -1, 1, -1};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(adv[i].index == i);
    CHECK_FALSE(adv[i].excluded);
    CHECK(adv[i].advantage == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("zero-variance and singleton groups are excluded") {
  auto recs = one_group({0.7, 0.7, 0.7});
  recs.push_back({GroupKey::per_agent(5, 2), 3.0});
  const auto adv = group_advantages(recs);
  for (const auto& a : adv) {
    CHECK(a.excluded);
    CHECK(a.advantage == 0.0);
  }
  const auto st = group_stats(recs);
  CHECK(st.groups == 2);
  CHECK(st.excluded_groups == 2);
  CHECK(group_advantages(std::vector<GroupedReward>{}).empty());
}

TEST_CASE("keys separate groups") {
  std::vector<GroupedReward> recs;
  recs.push_back({GroupKey::per_agent(0, 1), 1.0});
  recs.push_back({GroupKey::per_agent(0, 2), 0.0});
  recs.push_back({GroupKey::per_agent(0, 1), 0.0});
  recs.push_back({GroupKey::per_agent(0, 2), 1.0});
  recs.push_back({GroupKey{std::nullopt, 1, 0}, 5.0});
  recs.push_back({GroupKey{std::nullopt, std::nullopt, 0}, 9.0});
  const auto adv = group_advantages(recs);
  CHECK(adv[0].advantage == doctest::Approx(1.0));
  CHECK(adv[1].advantage == doctest::Approx(-1.0));
  CHECK(adv[2].advantage == doctest::Approx(-1.0));
  CHECK(adv[3].advantage == doctest::Approx(1.0));
  CHECK(adv[4].excluded);
  CHECK(adv[5].excluded);
  CHECK(group_stats(recs).groups == 4);
}

TEST_CASE("random groups: oracle match, zero mean, unit variance") {
  Rng rng(11);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t groups = 1 + uniform_index(rng, 4);
    std::vector<GroupedReward> recs;
    std::map<std::size_t, std::vector<double>> by_group;
    std::vector<std::size_t> owner;
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t size = 2 + uniform_index(rng, 7);
      for (std::size_t i = 0; i < size; ++i) {
        const double x = 4.0 * uniform01(rng) - 2.0;
        recs.push_back({GroupKey::per_agent(g, 1), x});
        by_group[g].push_back(x);
        owner.push_back(g);
      }
    }
    // interleave so group members are not contiguous
    std::vector<std::size_t> perm(recs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    shuffle(perm.begin(), perm.end(), rng);
    std::vector<GroupedReward> mixed;
    for (auto p : perm) mixed.push_back(recs[p]);
    const auto adv = group_advantages(mixed);

    std::map<std::size_t, std::size_t> seen;
    std::map<std::size_t, double> sum, sq;
    for (std::size_t k = 0; k < adv.size(); ++k) {
      const std::size_t orig = perm[adv[k].index];
      const std::size_t g = owner[orig];
      const auto want = oracle_normalize(by_group[g]);
      // position of orig inside its group
      std::size_t pos = 0;
      for (std::size_t j = 0; j < orig; ++j) pos += owner[j] == g;
      CHECK(adv[k].advantage == doctest::Approx(want[pos]).epsilon(1e-9));
      sum[g] += adv[k].advantage;
      sq[g] += adv[k].advantage * adv[k].advantage;
      ++seen[g];
    }
    for (auto& [g, n] : seen) {
      CHECK(std::abs(sum[g]) < 1e-9);
      CHECK(sq[g] / static_cast<double>(n) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("affine invariance") {
  Rng rng(5);
  for (int c = 0; c < 200; ++c) {
    std::vector<double> r(2 + uniform_index(rng, 6));
    for (auto& x : r) x = uniform01(rng);
    const double shift = 10.0 * uniform01(rng) - 5.0;
    const double scale = 0.1 + 5.0 * uniform01(rng);
    std::vector<double> t;
    for (double x : r) t.push_back(scale * x + shift);
    const auto a = group_advantages(one_group(r));
    const auto b = group_advantages(one_group(t));
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(b[i].advantage == doctest::Approx(a[i].advantage).epsilon(1e-8));
  }
}

TEST_CASE("token broadcast") {
  CHECK(broadcast_token_advantages(0.7, 3) == std::vector<double>{0.7, 0.7, 0.7});
  CHECK(broadcast_token_advantages(-1.0, 1) == std::vector<double>{-1.0});
  CHECK(broadcast_token_advantages(0.7, 3, TokenCredit::kLastToken) == std::vector<double>{0.0, 0.0, 0.7});
  CHECK_THROWS_AS(broadcast_token_advantages(1.0, 0), std::invalid_argument);
  CHECK(parse_token_credit("last_token") == TokenCredit::kLastToken);
  CHECK(token_credit_name(TokenCredit::kBroadcast) == "broadcast");
  CHECK_THROWS(parse_token_credit("nope"));
}

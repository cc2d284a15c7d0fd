#include "mhgpo/advantage.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace mhgpo {

TokenCredit parse_token_credit(const std::string& name) {
  if (name == "broadcast") return TokenCredit::kBroadcast;
  if (name == "last_token") return TokenCredit::kLastToken;
  throw std::invalid_argument("unknown token credit mode '" + name + "' (expected broadcast or last_token)");
}

std::string token_credit_name(TokenCredit c) { return c == TokenCredit::kLastToken ? "last_token" : "broadcast"; }

namespace {

std::map<GroupKey, std::vector<std::size_t>> by_key(std::span<const GroupedReward> records) {
  std::map<GroupKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].key].push_back(i);
  return groups;
}

struct Moments {
  double mean = 0.0;
  double std = 0.0;
};

Moments moments(std::span<const GroupedReward> records, const std::vector<std::size_t>& members) {
  Moments m;
  for (auto i : members) m.mean += records[i].total;
  m.mean /= static_cast<double>(members.size());
  double var = 0.0;
  for (auto i : members) var += (records[i].total - m.mean) * (records[i].total - m.mean);
  m.std = std::sqrt(var / static_cast<double>(members.size()));
  return m;
}

bool usable(const std::vector<std::size_t>& members, const Moments& m) {
  return members.size() >= 2 && m.std >= kMinGroupStd;
}

}  // namespace

std::vector<AdvantageRecord> group_advantages(std::span<const GroupedReward> records) {
  std::vector<AdvantageRecord> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out[i].index = i;
  for (const auto& [key, members] : by_key(records)) {
    const Moments m = moments(records, members);
    const bool ok = usable(members, m);
    for (auto i : members) {
      out[i].excluded = !ok;
      out[i].advantage = ok ? (records[i].total - m.mean) / m.std : 0.0;
    }
  }
  return out;
}

std::vector<double> broadcast_token_advantages(double advantage, std::size_t length, TokenCredit credit) {
  if (length == 0) throw std::invalid_argument("broadcast_token_advantages: sequence length must be >= 1");
  if (credit == TokenCredit::kLastToken) {
    std::vector<double> out(length, 0.0);
    out.back() = advantage;
    return out;
  }
  return std::vector<double>(length, advantage);
}

GroupStats group_stats(std::span<const GroupedReward> records) {
  GroupStats s;
  for (const auto& [key, members] : by_key(records)) {
    ++s.groups;
    if (!usable(members, moments(records, members))) ++s.excluded_groups;
  }
  return s;
}

}  // namespace mhgpo

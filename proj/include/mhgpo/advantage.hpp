#ifndef MHGPO_ADVANTAGE_HPP_
#define MHGPO_ADVANTAGE_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mhgpo/core_types.hpp"

namespace mhgpo {

inline constexpr double kMinGroupStd = 1e-8;

struct GroupedReward {
  GroupKey key;
  double total = 0.0;
};

struct AdvantageRecord {
  std::size_t index = 0;  // position in the group_advantages input
  double advantage = 0.0;
  std::vector<double> token_advantages;
  bool excluded = false;
};

enum class TokenCredit {
  kBroadcast,  // every token carries the sequence advantage
  kLastToken,  // only the final token does
};

TokenCredit parse_token_credit(const std::string& name);
std::string token_credit_name(TokenCredit c);

// (R - mean) / population std within each key. Groups of size < 2 or with
// std < kMinGroupStd get advantage 0 and are marked excluded.
std::vector<AdvantageRecord> group_advantages(std::span<const GroupedReward> records);

// Throws std::invalid_argument for length 0.
std::vector<double> broadcast_token_advantages(double advantage, std::size_t length,
                                               TokenCredit credit = TokenCredit::kBroadcast);

struct GroupStats {
  std::size_t groups = 0;
  std::size_t excluded_groups = 0;
};

GroupStats group_stats(std::span<const GroupedReward> records);

}  // namespace mhgpo

#endif  // MHGPO_ADVANTAGE_HPP_

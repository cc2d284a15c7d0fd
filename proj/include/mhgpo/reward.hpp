#ifndef MHGPO_REWARD_HPP_
#define MHGPO_REWARD_HPP_

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mhgpo/core_types.hpp"
#include "mhgpo/env_searchsim.hpp"

namespace mhgpo {

// Token-multiset F1. Returns 0 when there is no overlap.
template <typename T>
double f1_score(std::span<const T> prediction, std::span<const T> gold) {
  if (gold.empty()) throw std::invalid_argument("f1_score: gold answer is empty");
  std::map<T, std::size_t> counts;
  for (const auto& t : gold) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : prediction) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(prediction.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

template <typename T>
double exact_match(std::span<const T> prediction, std::span<const T> gold) {
  if (gold.empty()) throw std::invalid_argument("exact_match: gold answer is empty");
  return std::equal(prediction.begin(), prediction.end(), gold.begin(), gold.end()) ? 1.0 : 0.0;
}

// 1 iff every gold token (with multiplicity) occurs in the prediction.
template <typename T>
double accuracy(std::span<const T> prediction, std::span<const T> gold) {
  if (gold.empty()) throw std::invalid_argument("accuracy: gold answer is empty");
  std::map<T, std::size_t> counts;
  for (const auto& t : prediction) ++counts[t];
  for (const auto& t : gold) {
    auto it = counts.find(t);
    if (it == counts.end() || it->second == 0) return 0.0;
    --it->second;
  }
  return 1.0;
}

// F1 between two arbitrary outputs: both empty -> 1, one empty -> 0.
double output_f1(std::span<const Token> a, std::span<const Token> b);

// Lowercase + whitespace split.
std::vector<std::string> normalize_answer(const std::string& text);
double f1_score(const std::string& prediction, const std::string& gold);
double exact_match(const std::string& prediction, const std::string& gold);
double accuracy(const std::string& prediction, const std::string& gold);

struct RewardRecord {
  std::size_t pair = 0;  // index into QuestionRollout::pairs
  double shared = 0.0;
  double specific = 0.0;
  double total = 0.0;
};

// final_rewards[i] belongs to rollout.trajectories[i]. Terminal pairs take
// their trajectory's reward; every other pair takes the mean shared reward of
// its direct successors, filled in one pass from the chain tail to the head.
// Throws std::logic_error on a non-terminal pair without successors.
std::vector<RewardRecord> propagate_shared_rewards(const QuestionRollout& rollout, const MasTopology& topology,
                                                   std::span<const double> final_rewards);

struct PenaltyConfig {
  double rewriter_penalty = -0.5;
  std::size_t max_queries = 4;
  double reranker_penalty = -0.5;
  double answerer_penalty = -1.0;
  std::size_t answer_length_threshold = 8;
};

PenaltyConfig penalty_config(const EnvConfig& env);

// Agent-specific format penalty (<= 0) for the search chain.
double agent_specific_penalty(AgentId agent, const OutputFlags& flags, const PenaltyConfig& cfg);

// Final rewards (F1 against gold), propagation, penalties; total = shared + specific.
std::vector<RewardRecord> score_rollout(const QuestionRollout& rollout, const MasEnvironment& env,
                                        std::span<const Token> gold, const PenaltyConfig& penalties,
                                        std::vector<double>* final_rewards = nullptr);

}  // namespace mhgpo

#endif  // MHGPO_REWARD_HPP_

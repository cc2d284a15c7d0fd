#ifndef MHGPO_METRICS_HPP_
#define MHGPO_METRICS_HPP_

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mhgpo/core_types.hpp"
#include "mhgpo/env_searchsim.hpp"
#include "mhgpo/policy.hpp"

namespace mhgpo {

// Mean output F1 over all unordered pairs of outputs. Raw values; any
// min-max scaling belongs to reporting. Throws for fewer than two outputs.
double intra_group_similarity(std::span<const std::vector<Token>> outputs);
double intra_group_similarity(std::span<const RolloutPair* const> group, Token stop_token);

struct EvalSummary {
  double f1 = 0.0;
  double em = 0.0;
  double acc = 0.0;
  std::size_t questions = 0;
};

// Produces one agent's full output sequence (stop token included when emitted).
using Decoder = std::function<std::vector<Token>(AgentId agent, const Prompt& prompt)>;

EvalSummary evaluate(const Decoder& decode, const MasEnvironment& env, std::span<const QaItem> questions);

// Greedy argmax decoding with the shared policy.
EvalSummary evaluate_greedy(const PolicyParams& params, const MasEnvironment& env, std::span<const QaItem> questions);

// Scripted solver for the search chain.
EvalSummary evaluate_oracle(const SearchEnv& env, std::span<const QaItem> questions);

}  // namespace mhgpo

#endif  // MHGPO_METRICS_HPP_

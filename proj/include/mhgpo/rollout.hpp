#ifndef MHGPO_ROLLOUT_HPP_
#define MHGPO_ROLLOUT_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mhgpo/core_types.hpp"
#include "mhgpo/env_searchsim.hpp"
#include "mhgpo/policy.hpp"
#include "mhgpo/rng.hpp"

namespace mhgpo {

enum class Strategy { kIndependent, kForkOnFirst, kRoundRobin };

// How RR regroups singleton pairs across the batch.
enum class RegroupMode {
  kPerPartition,  // bucket within each (agent, fork agent) partition
  kPooled,        // one shuffled pool over all singletons
};

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);
RegroupMode parse_regroup_mode(const std::string& name);
std::string regroup_mode_name(RegroupMode m);

struct RolloutPlan {
  Strategy strategy = Strategy::kForkOnFirst;
  std::size_t group_size = 4;
  std::vector<double> rr_probs;  // one per agent, RR only
  RegroupMode regroup = RegroupMode::kPerPartition;
};

// Throws std::invalid_argument unless G >= 1 and, for RR, rr_probs has one
// non-negative entry per agent summing to 1 within 1e-9.
void validate_plan(const RolloutPlan& plan, std::size_t num_agents);

// What a sampler needs to invoke agents. max_len and stop_token of
// `sampling` are overridden per role from the topology and environment.
struct AgentRunner {
  const MasEnvironment& env;
  const PolicyParams& params;
  SamplingConfig sampling;

  SampledSequence invoke(AgentId agent, std::span<const double> context, Rng& rng) const;
};

// One-to-one rollout up to fork_agent, G samples from the fork agent's single
// input, then one-to-one to the end of the chain for every branch. Every pair
// gets the key (question_id, agent_id).
QuestionRollout fork_on(const QaItem& question, std::size_t group_size, AgentId fork_agent,
                        const AgentRunner& runner, Rng& rng);

QuestionRollout sample_fof(const QaItem& question, std::size_t group_size, const AgentRunner& runner, Rng& rng);

// fork_on at every agent in turn. All pairs are returned so rewards can
// propagate; only pairs of each tree's fork agent are marked kept.
std::vector<QuestionRollout> sample_is(const QaItem& question, std::size_t group_size, const AgentRunner& runner,
                                       Rng& rng);

struct RegroupSummary {
  std::size_t buckets = 0;
  std::size_t excluded = 0;
};

// Re-keys per-question singleton pairs into batch-wide buckets of size G.
// Leftovers stay singletons and are marked regroup_excluded.
RegroupSummary regroup_singletons(std::span<RolloutPair* const> singletons, std::size_t group_size, Rng& rng,
                                  RegroupMode mode = RegroupMode::kPerPartition);

// Seeds for a batch: every question draws from its own streams so results do
// not depend on evaluation order or thread count.
struct BatchSeeds {
  std::uint64_t base = 0;
  std::uint64_t step = 0;

  Rng rollout_stream(std::size_t question_id) const { return make_stream(base, {step, question_id, 1}); }
  Rng fork_stream(std::size_t question_id) const { return make_stream(base, {step, question_id, 2}); }
  Rng regroup_stream() const { return make_stream(base, {step, 3}); }
};

struct RrBatch {
  std::vector<QuestionRollout> rollouts;
  std::vector<AgentId> fork_agents;  // per question, batch order
  RegroupSummary regroup;
};

// Fork agent per question ~ Categorical(rr_probs), fork_on per question, then
// batch-wide regrouping of the pairs whose per-question group is a singleton.
RrBatch sample_rr(std::span<const QaItem> batch, const RolloutPlan& plan, const AgentRunner& runner,
                  const BatchSeeds& seeds, std::size_t threads = 1);

AgentId sample_fork_agent(std::span<const double> probs, Rng& rng);

// Dispatches on plan.strategy. IS yields n rollouts per question, the others one.
std::vector<QuestionRollout> sample_batch(std::span<const QaItem> batch, const RolloutPlan& plan,
                                          const AgentRunner& runner, const BatchSeeds& seeds,
                                          std::size_t threads = 1);

// Kept pair count per agent id.
std::map<AgentId, std::size_t> pair_counts(std::span<const QuestionRollout> rollouts);

}  // namespace mhgpo

#endif  // MHGPO_ROLLOUT_HPP_

#ifndef MHGPO_TRAINER_HPP_
#define MHGPO_TRAINER_HPP_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mhgpo/advantage.hpp"
#include "mhgpo/core_types.hpp"
#include "mhgpo/env_searchsim.hpp"
#include "mhgpo/policy.hpp"
#include "mhgpo/reward.hpp"
#include "mhgpo/rollout.hpp"

namespace mhgpo {

enum class Algorithm { kMhgpo, kMappo };
enum class KlMode { kEstimator, kExact };
enum class KlAnchor { kPerBatch, kFixed };

Algorithm parse_algorithm(const std::string& name);
std::string algorithm_name(Algorithm a);
KlMode parse_kl_mode(const std::string& name);
std::string kl_mode_name(KlMode m);
KlAnchor parse_kl_anchor(const std::string& name);
std::string kl_anchor_name(KlAnchor a);

struct MappoConfig {
  double gamma = 1.0;
  double lambda = 1.0;
  double critic_lr = 0.05;
};

struct TrainConfig {
  Algorithm algorithm = Algorithm::kMhgpo;
  double lr = 5.0;
  std::size_t batch_size = 32;
  std::size_t total_epochs = 1;
  std::size_t max_steps = 0;  // 0: run every batch of every epoch
  std::size_t ppo_epochs = 1;
  double clip_eps = 0.2;
  double kl_beta = 0.001;
  KlMode kl_mode = KlMode::kEstimator;
  KlAnchor kl_anchor = KlAnchor::kPerBatch;
  TokenCredit token_credit = TokenCredit::kBroadcast;
  RolloutPlan plan{Strategy::kForkOnFirst, 4, {0.7, 0.1, 0.2}, RegroupMode::kPerPartition};
  SamplingConfig sampling{0.9, 1.0, 8, 0};
  MappoConfig mappo;
  std::size_t eval_every = 5;
  std::size_t eval_size = 0;  // 0: the whole eval split
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

void validate_train_config(const TrainConfig& cfg, std::size_t num_agents);

struct StepStats {
  double mean_total_reward = 0.0;
  double mean_shared_reward = 0.0;
  double mean_final_reward = 0.0;
  std::map<AgentId, double> mean_penalty;
  std::map<AgentId, std::optional<double>> similarity;  // empty when the agent has no group of >= 2
  double objective = 0.0;
  double kl = 0.0;
  std::size_t groups = 0;
  std::size_t excluded_groups = 0;
  std::size_t pairs = 0;
  std::size_t policy_calls = 0;
  double max_ratio_deviation = 0.0;  // max |r - 1| over tokens in the first ppo epoch
  std::optional<double> critic_loss;
};

// A kept rollout pair with everything the update needs.
struct TrainSample {
  std::size_t question_id = 0;
  AgentId agent_id = 1;
  GroupKey key;
  std::vector<double> context;
  std::vector<Token> output;
  std::vector<double> sampling_logps;
  std::vector<double> ref_logps;
  double shared = 0.0;
  double specific = 0.0;
  double total = 0.0;
  double advantage = 0.0;
  std::vector<double> token_advantages;
  bool excluded = false;
};

struct BatchSamples {
  std::vector<TrainSample> samples;
  std::vector<double> final_rewards;  // one per trajectory
  std::size_t policy_calls = 0;
  std::size_t questions = 0;
};

// Scores every rollout tree, keeps the kept pairs, then normalizes rewards
// within group keys. ref_params supply the KL anchor log-probs.
BatchSamples build_samples(std::span<const QuestionRollout> rollouts, const MasEnvironment& env,
                           const std::map<std::size_t, const QaItem*>& questions, const PenaltyConfig& penalties,
                           TokenCredit credit, const PolicyParams& ref_params);

// min(r A, clip(r, 1 - eps, 1 + eps) A). Throws on r <= 0 or non-finite input.
double clipped_surrogate(double ratio, double advantage, double eps);

// d clipped_surrogate / d log r.
double clipped_surrogate_dlogr(double ratio, double advantage, double eps);

// Mean over tokens of exp(d) - d - 1 with d = logp_ref - logp_current.
double kl_estimate(std::span<const double> logp_current, std::span<const double> logp_ref);

struct ObjectiveEval {
  double objective = 0.0;
  double kl = 0.0;
  double max_ratio_deviation = 0.0;
  std::vector<double> gradient;
};

// (1/Q) sum_q (1/n) sum_k (1/G_k) sum_i (1/|o|) sum_t [surrogate - beta * kl],
// with G_k the number of kept pairs of agent k for question q, excluded pairs
// counted in G_k but contributing zero.
ObjectiveEval mhgpo_objective(std::span<const TrainSample> samples, const PolicyParams& params,
                              const PolicyParams& ref_params, const TrainConfig& cfg, std::size_t num_agents);

struct UpdateResult {
  PolicyParams params;
  StepStats stats;
};

// ppo_epochs ascent steps on the objective. Throws on an empty batch.
UpdateResult mhgpo_update(std::span<const TrainSample> samples, const PolicyParams& params,
                          const PolicyParams& ref_params, const TrainConfig& cfg, std::size_t num_agents);

// Reward, penalty and similarity statistics of a scored batch.
void fill_batch_stats(StepStats& stats, const BatchSamples& batch, std::span<const QuestionRollout> rollouts,
                      const MasEnvironment& env);

}  // namespace mhgpo

#endif  // MHGPO_TRAINER_HPP_

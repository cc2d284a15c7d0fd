#ifndef MHGPO_TRAINING_HPP_
#define MHGPO_TRAINING_HPP_

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "mhgpo/env_searchsim.hpp"
#include "mhgpo/mappo.hpp"
#include "mhgpo/metrics.hpp"
#include "mhgpo/policy.hpp"
#include "mhgpo/trainer.hpp"

namespace mhgpo {

struct StepRecord {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0;
  StepStats stats;
  std::optional<EvalSummary> eval;  // on validation steps only
};

struct TrainResult {
  PolicyParams params;
  std::optional<CriticParams> critic;  // MAPPO only
  std::vector<StepRecord> rows;
  std::optional<EvalSummary> initial_eval;
  std::optional<EvalSummary> final_eval;
  std::size_t steps = 0;
};

using StepCallback = std::function<void(const StepRecord&)>;

PolicyParams initial_policy(const MasEnvironment& env);

// Per epoch: shuffle the training split, then for every batch sample rollouts,
// score and propagate rewards, group advantages and run ppo_epochs updates.
// The KL anchor is the sampling snapshot of each batch (or the initial policy
// with KlAnchor::kFixed). Validation runs every cfg.eval_every steps.
TrainResult train(const TrainConfig& cfg, const SearchEnv& env, const StepCallback& on_step = {});

// Same loop starting from given parameters.
TrainResult train_from(const TrainConfig& cfg, const SearchEnv& env, PolicyParams init,
                       const StepCallback& on_step = {});

std::vector<QaItem> validation_split(const SearchEnv& env, std::size_t eval_size);

}  // namespace mhgpo

#endif  // MHGPO_TRAINING_HPP_

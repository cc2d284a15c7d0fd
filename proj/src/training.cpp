#include "mhgpo/training.hpp"

#include <numeric>
#include <stdexcept>

#include "mhgpo/rng.hpp"

namespace mhgpo {

PolicyParams initial_policy(const MasEnvironment& env) {
  auto p = PolicyParams::zeros(env.topology().size(), env.context_dim(), env.topology().max_output_len(),
                               env.policy_vocab());
  for (const auto& r : env.topology().agents) p.allowed.push_back(env.output_alphabet(r.id));
  return p;
}

std::vector<QaItem> validation_split(const SearchEnv& env, std::size_t eval_size) {
  const auto& eval = env.dataset().eval;
  const std::size_t n = eval_size == 0 ? eval.size() : std::min(eval_size, eval.size());
  return {eval.begin(), eval.begin() + static_cast<std::ptrdiff_t>(n)};
}

TrainResult train(const TrainConfig& cfg, const SearchEnv& env, const StepCallback& on_step) {
  return train_from(cfg, env, initial_policy(env), on_step);
}

TrainResult train_from(const TrainConfig& cfg, const SearchEnv& env, PolicyParams init,
                       const StepCallback& on_step) {
  const std::size_t n = env.topology().size();
  validate_train_config(cfg, n);
  const auto& train_set = env.dataset().train;
  if (train_set.empty()) throw std::invalid_argument("train: training dataset is empty");

  std::map<std::size_t, const QaItem*> by_id;
  for (const auto& q : train_set) by_id[q.question_id] = &q;
  const auto validation = validation_split(env, cfg.eval_size);
  const PenaltyConfig penalties = penalty_config(env.cfg());

  TrainResult result;
  result.params = std::move(init);
  const PolicyParams anchor = result.params;
  if (cfg.algorithm == Algorithm::kMappo) {
    result.critic = CriticParams::zeros_like(result.params, cfg.mappo.gamma, cfg.mappo.lambda);
  }
  if (!validation.empty()) result.initial_eval = evaluate_greedy(result.params, env, validation);

  RolloutPlan plan = cfg.plan;
  if (cfg.algorithm == Algorithm::kMappo) {
    // One trajectory per question.
    plan.strategy = Strategy::kForkOnFirst;
    plan.group_size = 1;
  }

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.total_epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng = make_stream(cfg.seed, {epoch, 0xba7cULL});
    shuffle(order.begin(), order.end(), order_rng);

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
      ++step;
      std::vector<QaItem> batch;
      for (std::size_t i = begin; i < std::min(order.size(), begin + cfg.batch_size); ++i) {
        batch.push_back(train_set[order[i]]);
      }

      const AgentRunner runner{env, result.params, cfg.sampling};
      const BatchSeeds seeds{cfg.seed, step};
      const auto rollouts = sample_batch(batch, plan, runner, seeds, cfg.threads);
      const PolicyParams& ref = cfg.kl_anchor == KlAnchor::kFixed ? anchor : result.params;
      const auto scored = build_samples(rollouts, env, by_id, penalties, cfg.token_credit, ref);

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      if (cfg.algorithm == Algorithm::kMhgpo) {
        auto upd = mhgpo_update(scored.samples, result.params, ref, cfg, n);
        result.params = std::move(upd.params);
        rec.stats = std::move(upd.stats);
      } else {
        auto upd = mappo_update(scored.samples, result.params, *result.critic, cfg, n);
        result.params = std::move(upd.actor);
        result.critic = std::move(upd.critic);
        rec.stats = std::move(upd.stats);
      }
      fill_batch_stats(rec.stats, scored, rollouts, env);
      if (!validation.empty() && cfg.eval_every > 0 && step % cfg.eval_every == 0) {
        rec.eval = evaluate_greedy(result.params, env, validation);
      }
      if (on_step) on_step(rec);
      result.rows.push_back(std::move(rec));
    }
    if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
  }
  result.steps = step;
  if (!validation.empty()) result.final_eval = evaluate_greedy(result.params, env, validation);
  return result;
}

}  // namespace mhgpo

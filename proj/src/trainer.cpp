#include "mhgpo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mhgpo/metrics.hpp"

namespace mhgpo {

Algorithm parse_algorithm(const std::string& name) {
  if (name == "mhgpo") return Algorithm::kMhgpo;
  if (name == "mappo") return Algorithm::kMappo;
  throw std::invalid_argument("unknown algorithm '" + name + "' (expected mhgpo or mappo)");
}

std::string algorithm_name(Algorithm a) { return a == Algorithm::kMappo ? "mappo" : "mhgpo"; }

KlMode parse_kl_mode(const std::string& name) {
  if (name == "estimator") return KlMode::kEstimator;
  if (name == "exact") return KlMode::kExact;
  throw std::invalid_argument("unknown kl mode '" + name + "' (expected estimator or exact)");
}

std::string kl_mode_name(KlMode m) { return m == KlMode::kExact ? "exact" : "estimator"; }

KlAnchor parse_kl_anchor(const std::string& name) {
  if (name == "per_batch") return KlAnchor::kPerBatch;
  if (name == "fixed") return KlAnchor::kFixed;
  throw std::invalid_argument("unknown kl anchor '" + name + "' (expected per_batch or fixed)");
}

std::string kl_anchor_name(KlAnchor a) { return a == KlAnchor::kFixed ? "fixed" : "per_batch"; }

void validate_train_config(const TrainConfig& cfg, std::size_t num_agents) {
  if (!(cfg.clip_eps > 0.0)) throw std::invalid_argument("train: clip_eps must be > 0");
  if (!(cfg.kl_beta >= 0.0)) throw std::invalid_argument("train: kl_beta must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.ppo_epochs < 1) throw std::invalid_argument("train: ppo_epochs must be >= 1");
  if (!std::isfinite(cfg.lr)) throw std::invalid_argument("train: lr must be finite");
  if (cfg.mappo.gamma < 0.0 || cfg.mappo.gamma > 1.0 || cfg.mappo.lambda < 0.0 || cfg.mappo.lambda > 1.0) {
    throw std::invalid_argument("train: gamma and lambda must lie in [0, 1]");
  }
  validate_sampling(cfg.sampling);
  validate_plan(cfg.plan, num_agents);
}

BatchSamples build_samples(std::span<const QuestionRollout> rollouts, const MasEnvironment& env,
                           const std::map<std::size_t, const QaItem*>& questions, const PenaltyConfig& penalties,
                           TokenCredit credit, const PolicyParams& ref_params) {
  BatchSamples out;
  std::vector<std::size_t> seen_questions;
  for (const auto& r : rollouts) {
    const auto it = questions.find(r.question_id);
    if (it == questions.end()) throw std::out_of_range("build_samples: unknown question " + std::to_string(r.question_id));
    if (std::find(seen_questions.begin(), seen_questions.end(), r.question_id) == seen_questions.end()) {
      seen_questions.push_back(r.question_id);
    }
    std::vector<double> finals;
    const auto records = score_rollout(r, env, it->second->gold, penalties, &finals);
    out.final_rewards.insert(out.final_rewards.end(), finals.begin(), finals.end());
    out.policy_calls += r.pairs.size();
    for (std::size_t j = 0; j < r.pairs.size(); ++j) {
      const auto& p = r.pairs[j];
      if (!p.kept) continue;
      if (!p.group_key) throw std::logic_error("build_samples: pair without group key");
      TrainSample s;
      s.question_id = p.question_id;
      s.agent_id = p.agent_id;
      s.key = *p.group_key;
      s.context = p.input_ctx;
      s.output = p.output_seq;
      s.sampling_logps = p.token_logps;
      s.ref_logps = sequence_log_prob(ref_params, p.agent_id, p.input_ctx, p.output_seq);
      s.shared = records[j].shared;
      s.specific = records[j].specific;
      s.total = records[j].total;
      out.samples.push_back(std::move(s));
    }
  }
  out.questions = seen_questions.size();

  std::vector<GroupedReward> grouped;
  grouped.reserve(out.samples.size());
  for (const auto& s : out.samples) grouped.push_back({s.key, s.total});
  const auto adv = group_advantages(grouped);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    auto& s = out.samples[i];
    s.advantage = adv[i].advantage;
    s.excluded = adv[i].excluded;
    s.token_advantages = broadcast_token_advantages(s.advantage, s.output.size(), credit);
  }
  return out;
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  if (!std::isfinite(ratio) || !std::isfinite(advantage) || !std::isfinite(eps)) {
    throw std::domain_error("clipped_surrogate: non-finite input");
  }
  if (ratio <= 0.0) throw std::domain_error("clipped_surrogate: ratio must be positive");
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

double clipped_surrogate_dlogr(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  // The unclipped branch is active when it is the smaller one (ties included).
  return ratio * advantage <= clipped * advantage ? ratio * advantage : 0.0;
}

double kl_estimate(std::span<const double> logp_current, std::span<const double> logp_ref) {
  if (logp_current.size() != logp_ref.size()) throw std::invalid_argument("kl_estimate: length mismatch");
  if (logp_current.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < logp_current.size(); ++t) {
    const double d = logp_ref[t] - logp_current[t];
    sum += std::max(0.0, std::expm1(d) - d);
  }
  return sum / static_cast<double>(logp_current.size());
}

namespace {

// KL(pi || ref) at one position and its gradient with respect to pi's logits.
double exact_kl_step(std::span<const double> logp, std::span<const double> logq, std::vector<double>& dlogits) {
  double kl = 0.0;
  for (std::size_t v = 0; v < logp.size(); ++v) {
    if (std::isfinite(logp[v])) kl += std::exp(logp[v]) * (logp[v] - logq[v]);
  }
  dlogits.assign(logp.size(), 0.0);
  for (std::size_t v = 0; v < logp.size(); ++v) {
    if (std::isfinite(logp[v])) dlogits[v] = std::exp(logp[v]) * (logp[v] - logq[v] - kl);
  }
  return kl;
}

}  // namespace

ObjectiveEval mhgpo_objective(std::span<const TrainSample> samples, const PolicyParams& params,
                              const PolicyParams& ref_params, const TrainConfig& cfg, std::size_t num_agents) {
  if (samples.empty()) throw std::invalid_argument("mhgpo_update: empty batch");
  ObjectiveEval out;
  out.gradient.assign(params.weights.size(), 0.0);

  std::map<std::pair<std::size_t, AgentId>, std::size_t> group_sizes;  // G_k per question
  std::vector<std::size_t> questions;
  for (const auto& s : samples) {
    ++group_sizes[{s.question_id, s.agent_id}];
    if (std::find(questions.begin(), questions.end(), s.question_id) == questions.end()) {
      questions.push_back(s.question_id);
    }
  }
  const double per_question = 1.0 / static_cast<double>(questions.size());
  const double per_agent = 1.0 / static_cast<double>(num_agents);

  std::size_t kl_tokens = 0;
  std::vector<double> weights;
  std::vector<double> dlogits;
  for (const auto& s : samples) {
    if (s.excluded || s.output.empty()) continue;
    const double scale = per_question * per_agent / static_cast<double>(group_sizes[{s.question_id, s.agent_id}]) /
                         static_cast<double>(s.output.size());
    const auto logp = sequence_log_prob(params, s.agent_id, s.context, s.output);
    weights.assign(s.output.size(), 0.0);
    for (std::size_t t = 0; t < s.output.size(); ++t) {
      const double ratio = std::exp(logp[t] - s.sampling_logps[t]);
      out.max_ratio_deviation = std::max(out.max_ratio_deviation, std::abs(ratio - 1.0));
      const double a = s.token_advantages[t];
      out.objective += scale * clipped_surrogate(ratio, a, cfg.clip_eps);
      weights[t] = scale * clipped_surrogate_dlogr(ratio, a, cfg.clip_eps);
    }

    if (cfg.kl_mode == KlMode::kEstimator) {
      for (std::size_t t = 0; t < s.output.size(); ++t) {
        const double d = s.ref_logps[t] - logp[t];
        const double kl = std::max(0.0, std::expm1(d) - d);
        out.kl += kl;
        out.objective -= scale * cfg.kl_beta * kl;
        // d/dlogp of (e^d - d - 1) is 1 - e^d.
        weights[t] -= scale * cfg.kl_beta * (-std::expm1(d));
      }
      kl_tokens += s.output.size();
    }
    accumulate_weighted_grad(params, s.agent_id, s.context, s.output, weights, out.gradient);

    if (cfg.kl_mode == KlMode::kExact) {
      std::optional<Token> prev;
      for (std::size_t t = 0; t < s.output.size(); ++t) {
        const auto lp = log_softmax(step_logits(params, s.agent_id, s.context, t, prev));
        const auto lq = log_softmax(step_logits(ref_params, s.agent_id, s.context, t, prev));
        const double kl = exact_kl_step(lp, lq, dlogits);
        out.kl += kl;
        out.objective -= scale * cfg.kl_beta * kl;
        for (auto& g : dlogits) g *= -scale * cfg.kl_beta;
        accumulate_logit_grad(params, s.agent_id, s.context, t, prev, dlogits, out.gradient);
        prev = s.output[t];
      }
      kl_tokens += s.output.size();
    }
  }
  if (kl_tokens > 0) out.kl /= static_cast<double>(kl_tokens);
  return out;
}

UpdateResult mhgpo_update(std::span<const TrainSample> samples, const PolicyParams& params,
                          const PolicyParams& ref_params, const TrainConfig& cfg, std::size_t num_agents) {
  if (samples.empty()) throw std::invalid_argument("mhgpo_update: empty batch");
  UpdateResult out{params, {}};
  for (std::size_t epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    const auto eval = mhgpo_objective(samples, out.params, ref_params, cfg, num_agents);
    if (epoch == 0) {
      out.stats.objective = eval.objective;
      out.stats.kl = eval.kl;
      out.stats.max_ratio_deviation = eval.max_ratio_deviation;
    }
    out.params = apply_update(out.params, eval.gradient, cfg.lr);
  }
  return out;
}

void fill_batch_stats(StepStats& stats, const BatchSamples& batch, std::span<const QuestionRollout> rollouts,
                      const MasEnvironment& env) {
  const auto n = static_cast<AgentId>(env.topology().size());
  stats.pairs = batch.samples.size();
  stats.policy_calls = batch.policy_calls;
  stats.mean_total_reward = 0.0;
  stats.mean_shared_reward = 0.0;
  std::map<AgentId, std::pair<double, std::size_t>> penalty;
  for (AgentId a = 1; a <= n; ++a) penalty[a] = {0.0, 0};
  for (const auto& s : batch.samples) {
    stats.mean_total_reward += s.total;
    stats.mean_shared_reward += s.shared;
    penalty[s.agent_id].first += s.specific;
    ++penalty[s.agent_id].second;
  }
  if (!batch.samples.empty()) {
    stats.mean_total_reward /= static_cast<double>(batch.samples.size());
    stats.mean_shared_reward /= static_cast<double>(batch.samples.size());
  }
  stats.mean_penalty.clear();
  for (const auto& [a, acc] : penalty) {
    stats.mean_penalty[a] = acc.second ? acc.first / static_cast<double>(acc.second) : 0.0;
  }
  stats.mean_final_reward = 0.0;
  for (double r : batch.final_rewards) stats.mean_final_reward += r;
  if (!batch.final_rewards.empty()) stats.mean_final_reward /= static_cast<double>(batch.final_rewards.size());

  std::vector<GroupedReward> grouped;
  for (const auto& s : batch.samples) grouped.push_back({s.key, s.total});
  const auto gs = group_stats(grouped);
  stats.groups = gs.groups;
  stats.excluded_groups = gs.excluded_groups;

  std::map<GroupKey, std::vector<const RolloutPair*>> groups;
  for (const auto& r : rollouts) {
    for (const auto& p : r.pairs) {
      if (p.kept && p.group_key) groups[*p.group_key].push_back(&p);
    }
  }
  std::map<AgentId, std::pair<double, std::size_t>> sim;
  for (const auto& [key, members] : groups) {
    if (members.size() < 2) continue;
    const AgentId agent = members.front()->agent_id;
    const bool single_agent = std::all_of(members.begin(), members.end(),
                                          [&](const RolloutPair* p) { return p->agent_id == agent; });
    if (!single_agent) continue;
    sim[agent].first += intra_group_similarity(members, env.stop_token());
    ++sim[agent].second;
  }
  stats.similarity.clear();
  for (AgentId a = 1; a <= n; ++a) {
    const auto it = sim.find(a);
    stats.similarity[a] = it == sim.end() ? std::nullopt
                                          : std::optional<double>(it->second.first / static_cast<double>(it->second.second));
  }
}

}  // namespace mhgpo

#include "mhgpo/mappo.hpp"

#include <cmath>
#include <stdexcept>

namespace mhgpo {

CriticParams CriticParams::zeros_like(const PolicyParams& actor, double gamma, double lambda) {
  CriticParams c;
  c.num_roles = actor.num_roles;
  c.context_dim = actor.context_dim;
  c.max_positions = actor.max_positions;
  c.vocab_size = actor.vocab_size;
  c.weights.assign(c.num_roles * c.feature_dim(), 0.0);
  c.gamma = gamma;
  c.lambda = lambda;
  return c;
}

namespace {

std::size_t row(const CriticParams& c, AgentId role) {
  if (role < 1 || static_cast<std::size_t>(role) > c.num_roles) throw std::out_of_range("critic: role out of range");
  return static_cast<std::size_t>(role - 1) * c.feature_dim();
}

std::size_t position_feature(const CriticParams& c, std::size_t position) { return c.context_dim + position; }

std::size_t prev_feature(const CriticParams& c, std::optional<Token> prev) {
  return c.context_dim + c.max_positions + (prev ? static_cast<std::size_t>(*prev) + 1 : 0);
}

}  // namespace

double critic_value(const CriticParams& critic, AgentId role, std::span<const double> context, std::size_t position,
                    std::optional<Token> prev) {
  if (context.size() != critic.context_dim) throw std::invalid_argument("critic: context dimension mismatch");
  if (position >= critic.max_positions) throw std::out_of_range("critic: position out of range");
  const std::size_t base = row(critic, role);
  double v = 0.0;
  for (std::size_t f = 0; f < context.size(); ++f) v += critic.weights[base + f] * context[f];
  v += critic.weights[base + position_feature(critic, position)];
  v += critic.weights[base + prev_feature(critic, prev)];
  if (!std::isfinite(v)) throw std::domain_error("critic: non-finite value");
  return v;
}

std::vector<double> critic_values(const CriticParams& critic, AgentId role, std::span<const double> context,
                                  std::span<const Token> sequence) {
  std::vector<double> out;
  out.reserve(sequence.size());
  std::optional<Token> prev;
  for (std::size_t t = 0; t < sequence.size(); ++t) {
    out.push_back(critic_value(critic, role, context, t, prev));
    prev = sequence[t];
  }
  return out;
}

std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values, double gamma,
                                   double lambda) {
  if (rewards.size() != values.size()) throw std::invalid_argument("gae_advantages: length mismatch");
  std::vector<double> adv(rewards.size(), 0.0);
  double running = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    const double next_value = i + 1 < values.size() ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + gamma * lambda * running;
    adv[i] = running;
  }
  return adv;
}

CriticLoss critic_loss(const CriticParams& critic, std::span<const CriticTarget> targets) {
  CriticLoss out;
  out.gradient.assign(critic.weights.size(), 0.0);
  std::size_t tokens = 0;
  for (const auto& tgt : targets) {
    const auto& ctx = *tgt.context;
    const auto& seq = *tgt.sequence;
    const std::size_t base = row(critic, tgt.role);
    std::optional<Token> prev;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const double err = critic_value(critic, tgt.role, ctx, t, prev) - tgt.returns[t];
      out.loss += 0.5 * err * err;
      for (std::size_t f = 0; f < ctx.size(); ++f) out.gradient[base + f] += err * ctx[f];
      out.gradient[base + position_feature(critic, t)] += err;
      out.gradient[base + prev_feature(critic, prev)] += err;
      prev = seq[t];
      ++tokens;
    }
  }
  if (tokens > 0) {
    out.loss /= static_cast<double>(tokens);
    for (auto& g : out.gradient) g /= static_cast<double>(tokens);
  }
  return out;
}

MappoResult mappo_update(std::span<const TrainSample> samples, const PolicyParams& actor, const CriticParams& critic,
                         const TrainConfig& cfg, std::size_t num_agents) {
  if (samples.empty()) throw std::invalid_argument("mappo_update: empty batch");
  MappoResult out{actor, critic, {}, {samples.begin(), samples.end()}};

  std::vector<CriticTarget> targets;
  targets.reserve(out.samples.size());
  for (auto& s : out.samples) {
    std::vector<double> rewards(s.output.size(), 0.0);
    if (!rewards.empty()) rewards.back() = s.total;
    const auto values = critic_values(critic, s.agent_id, s.context, s.output);
    s.token_advantages = gae_advantages(rewards, values, critic.gamma, critic.lambda);
    s.excluded = false;
    CriticTarget tgt{s.agent_id, &s.context, &s.output, {}};
    tgt.returns.resize(values.size());
    for (std::size_t t = 0; t < values.size(); ++t) tgt.returns[t] = s.token_advantages[t] + values[t];
    targets.push_back(std::move(tgt));
  }

  TrainConfig actor_cfg = cfg;
  actor_cfg.kl_beta = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    const auto eval = mhgpo_objective(out.samples, out.actor, actor, actor_cfg, num_agents);
    const auto closs = critic_loss(out.critic, targets);
    if (epoch == 0) {
      out.stats.objective = eval.objective;
      out.stats.max_ratio_deviation = eval.max_ratio_deviation;
      out.stats.critic_loss = closs.loss;
    }
    out.actor = apply_update(out.actor, eval.gradient, cfg.lr);
    for (std::size_t i = 0; i < out.critic.weights.size(); ++i) {
      if (!std::isfinite(closs.gradient[i])) throw std::domain_error("mappo_update: non-finite critic gradient");
      out.critic.weights[i] -= cfg.mappo.critic_lr * closs.gradient[i];
    }
  }
  return out;
}

}  // namespace mhgpo

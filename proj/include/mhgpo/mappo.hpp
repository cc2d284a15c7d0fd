#ifndef MHGPO_MAPPO_HPP_
#define MHGPO_MAPPO_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mhgpo/policy.hpp"
#include "mhgpo/trainer.hpp"

namespace mhgpo {

// Linear value head over the policy's per-step feature layout, one weight
// vector per role.
struct CriticParams {
  std::size_t num_roles = 0;
  std::size_t context_dim = 0;
  std::size_t max_positions = 0;
  std::size_t vocab_size = 0;
  std::vector<double> weights;  // (role, feature)
  double gamma = 1.0;
  double lambda = 1.0;

  static CriticParams zeros_like(const PolicyParams& actor, double gamma = 1.0, double lambda = 1.0);

  std::size_t feature_dim() const { return context_dim + max_positions + vocab_size + 1; }
  double& at(AgentId role, std::size_t feature) {
    return weights[static_cast<std::size_t>(role - 1) * feature_dim() + feature];
  }
};

// w_role . [context | position one-hot | previous-token one-hot].
double critic_value(const CriticParams& critic, AgentId role, std::span<const double> context, std::size_t position,
                    std::optional<Token> prev);

// Values of the states before each token of `sequence`.
std::vector<double> critic_values(const CriticParams& critic, AgentId role, std::span<const double> context,
                                  std::span<const Token> sequence);

// A_t = sum_l (gamma lambda)^l delta_{t+l}, delta_t = R_t + gamma V_{t+1} - V_t,
// with V past the last token taken as 0. Throws on length mismatch.
std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values, double gamma,
                                   double lambda);

// Mean over tokens of 0.5 (V - return)^2 and its gradient.
struct CriticLoss {
  double loss = 0.0;
  std::vector<double> gradient;
};

struct CriticTarget {
  AgentId role = 1;
  const std::vector<double>* context = nullptr;
  const std::vector<Token>* sequence = nullptr;
  std::vector<double> returns;
};

CriticLoss critic_loss(const CriticParams& critic, std::span<const CriticTarget> targets);

struct MappoResult {
  PolicyParams actor;
  CriticParams critic;
  StepStats stats;
  std::vector<TrainSample> samples;  // with GAE token advantages filled in
};

// Rewards sit on the last token of each agent output (the pair's total
// reward); GAE per pair; PPO-clip actor step and squared-error critic step
// per ppo epoch. The actor loss is aggregated exactly like MHGPO's, without a KL term.
MappoResult mappo_update(std::span<const TrainSample> samples, const PolicyParams& actor, const CriticParams& critic,
                         const TrainConfig& cfg, std::size_t num_agents);

}  // namespace mhgpo

#endif  // MHGPO_MAPPO_HPP_

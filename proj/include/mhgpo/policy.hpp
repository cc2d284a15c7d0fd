#ifndef MHGPO_POLICY_HPP_
#define MHGPO_POLICY_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "mhgpo/core_types.hpp"
#include "mhgpo/rng.hpp"

namespace mhgpo {

// Shared linear-softmax sequence policy. One weight block per role; the
// per-step feature vector is
//   [ context (context_dim) | position one-hot (max_positions) | previous token one-hot (vocab_size + 1) ]
// where slot 0 of the previous-token block means "no previous token".
struct PolicyParams {
  std::size_t num_roles = 0;
  std::size_t context_dim = 0;
  std::size_t max_positions = 0;
  std::size_t vocab_size = 0;
  std::vector<double> weights;  // (role, feature, token), token fastest
  // Per role output alphabet; an empty list (or empty mask) allows every token.
  std::vector<std::vector<bool>> allowed;

  static PolicyParams zeros(std::size_t num_roles, std::size_t context_dim,
                            std::size_t max_positions, std::size_t vocab_size);

  std::size_t feature_dim() const { return context_dim + max_positions + vocab_size + 1; }
  std::size_t index(AgentId role, std::size_t feature, Token token) const;
  double& at(AgentId role, std::size_t feature, Token token) { return weights[index(role, feature, token)]; }
  double at(AgentId role, std::size_t feature, Token token) const { return weights[index(role, feature, token)]; }

  std::size_t position_feature(std::size_t position) const { return context_dim + position; }
  bool token_allowed(AgentId role, Token token) const;
  std::size_t prev_token_feature(std::optional<Token> prev) const {
    return context_dim + max_positions + (prev ? static_cast<std::size_t>(*prev) + 1 : 0);
  }
};

struct SamplingConfig {
  double top_n = 0.9;
  double temperature = 1.0;
  std::size_t max_len = 8;
  Token stop_token = 0;
};

void validate_sampling(const SamplingConfig& cfg);

struct SampledSequence {
  std::vector<Token> tokens;
  std::vector<double> logps;
};

// Logits at one decoding position; tokens outside the role's alphabet get -inf.
// Throws std::domain_error on non-finite values of allowed tokens.
std::vector<double> step_logits(const PolicyParams& params, AgentId role, std::span<const double> context,
                                std::size_t position, std::optional<Token> prev);

std::vector<double> log_softmax(std::span<const double> logits);

// Indices of the smallest set of tokens, by descending probability (ties by
// ascending id), whose cumulative probability reaches top_n.
std::vector<std::size_t> nucleus(std::span<const double> probs, double top_n);

// Samples until the stop token or cfg.max_len. Reported log-probs are taken
// from the full softmax, not the renormalized nucleus.
SampledSequence sample_sequence(const PolicyParams& params, AgentId role, std::span<const double> context,
                                const SamplingConfig& cfg, Rng& rng);

// Argmax decoding, lowest token id on ties.
std::vector<Token> greedy_sequence(const PolicyParams& params, AgentId role, std::span<const double> context,
                                   std::size_t max_len, Token stop_token);

std::vector<double> sequence_log_prob(const PolicyParams& params, AgentId role, std::span<const double> context,
                                      std::span<const Token> sequence);

// d/dweights of sum_t log pi(o_t | context, o_<t).
std::vector<double> grad_log_prob(const PolicyParams& params, AgentId role, std::span<const double> context,
                                  std::span<const Token> sequence);

// grad += d/dweights of sum_t token_weights[t] * log pi(o_t | ...).
void accumulate_weighted_grad(const PolicyParams& params, AgentId role, std::span<const double> context,
                              std::span<const Token> sequence, std::span<const double> token_weights,
                              std::span<double> grad);

// grad += sum_v dlogits[v] * d logit_v / d weights at one position.
void accumulate_logit_grad(const PolicyParams& params, AgentId role, std::span<const double> context,
                           std::size_t position, std::optional<Token> prev, std::span<const double> dlogits,
                           std::span<double> grad);

// Gradient ascent: params + lr * gradient. Throws on shape mismatch or non-finite gradient.
PolicyParams apply_update(const PolicyParams& params, std::span<const double> gradient, double learning_rate);

}  // namespace mhgpo

#endif  // MHGPO_POLICY_HPP_

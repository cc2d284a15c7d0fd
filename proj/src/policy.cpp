#include "mhgpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mhgpo {

PolicyParams PolicyParams::zeros(std::size_t num_roles, std::size_t context_dim, std::size_t max_positions,
                                 std::size_t vocab_size) {
  if (num_roles == 0 || vocab_size < 2 || max_positions == 0) {
    throw std::invalid_argument("policy: need >= 1 role, >= 2 tokens and >= 1 position");
  }
  PolicyParams p;
  p.num_roles = num_roles;
  p.context_dim = context_dim;
  p.max_positions = max_positions;
  p.vocab_size = vocab_size;
  p.weights.assign(num_roles * p.feature_dim() * vocab_size, 0.0);
  return p;
}

std::size_t PolicyParams::index(AgentId role, std::size_t feature, Token token) const {
  return ((static_cast<std::size_t>(role - 1) * feature_dim()) + feature) * vocab_size +
         static_cast<std::size_t>(token);
}

bool PolicyParams::token_allowed(AgentId role, Token token) const {
  const auto r = static_cast<std::size_t>(role - 1);
  if (r >= allowed.size() || allowed[r].empty()) return true;
  return allowed[r][static_cast<std::size_t>(token)];
}

void validate_sampling(const SamplingConfig& cfg) {
  if (!(cfg.top_n > 0.0 && cfg.top_n <= 1.0)) throw std::invalid_argument("sampling: top_n must be in (0, 1]");
  if (!(cfg.temperature > 0.0)) throw std::invalid_argument("sampling: temperature must be positive");
  if (cfg.max_len == 0) throw std::invalid_argument("sampling: max_len must be positive");
}

namespace {

void check_call(const PolicyParams& params, AgentId role, std::span<const double> context) {
  if (role < 1 || static_cast<std::size_t>(role) > params.num_roles) {
    throw std::out_of_range("policy: role " + std::to_string(role) + " out of range");
  }
  if (context.size() != params.context_dim) {
    throw std::invalid_argument("policy: context has " + std::to_string(context.size()) +
                                " features, expected " + std::to_string(params.context_dim));
  }
}

void check_sequence(const PolicyParams& params, AgentId role, std::span<const Token> sequence) {
  if (sequence.size() > params.max_positions) {
    throw std::invalid_argument("policy: sequence longer than max_positions");
  }
  for (Token t : sequence) {
    if (t < 0 || static_cast<std::size_t>(t) >= params.vocab_size) {
      throw std::out_of_range("policy: token id " + std::to_string(t) + " outside vocab of " +
                              std::to_string(params.vocab_size));
    }
    if (!params.token_allowed(role, t)) {
      throw std::out_of_range("policy: token " + std::to_string(t) + " outside the alphabet of role " +
                              std::to_string(role));
    }
  }
}

// Context contribution W_role^T x, shared by every position of a sequence.
std::vector<double> context_logits(const PolicyParams& params, AgentId role, std::span<const double> context) {
  const std::size_t v = params.vocab_size;
  std::vector<double> out(v, 0.0);
  for (std::size_t f = 0; f < params.context_dim; ++f) {
    const double x = context[f];
    if (x == 0.0) continue;
    const double* row = &params.weights[params.index(role, f, 0)];
    for (std::size_t j = 0; j < v; ++j) out[j] += x * row[j];
  }
  return out;
}

std::vector<double> add_step_rows(const PolicyParams& params, AgentId role, std::vector<double> logits,
                                  std::size_t position, std::optional<Token> prev) {
  const double* pos_row = &params.weights[params.index(role, params.position_feature(position), 0)];
  const double* prev_row = &params.weights[params.index(role, params.prev_token_feature(prev), 0)];
  for (std::size_t j = 0; j < logits.size(); ++j) {
    logits[j] += pos_row[j] + prev_row[j];
    if (!std::isfinite(logits[j])) throw std::domain_error("policy: non-finite logit");
    if (!params.token_allowed(role, static_cast<Token>(j))) logits[j] = -std::numeric_limits<double>::infinity();
  }
  return logits;
}

void add_outer(const PolicyParams& params, AgentId role, std::span<const double> context, std::size_t position,
               std::optional<Token> prev, std::span<const double> dlogits, std::span<double> grad) {
  const std::size_t v = params.vocab_size;
  for (std::size_t f = 0; f < params.context_dim; ++f) {
    const double x = context[f];
    if (x == 0.0) continue;
    double* row = &grad[params.index(role, f, 0)];
    for (std::size_t j = 0; j < v; ++j) row[j] += x * dlogits[j];
  }
  double* pos_row = &grad[params.index(role, params.position_feature(position), 0)];
  double* prev_row = &grad[params.index(role, params.prev_token_feature(prev), 0)];
  for (std::size_t j = 0; j < v; ++j) {
    pos_row[j] += dlogits[j];
    prev_row[j] += dlogits[j];
  }
}

}  // namespace

std::vector<double> step_logits(const PolicyParams& params, AgentId role, std::span<const double> context,
                                std::size_t position, std::optional<Token> prev) {
  check_call(params, role, context);
  if (position >= params.max_positions) throw std::out_of_range("policy: position beyond max_positions");
  return add_step_rows(params, role, context_logits(params, role, context), position, prev);
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double lse = m + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] = logits[j] - lse;
  return out;
}

std::vector<std::size_t> nucleus(std::span<const double> probs, double top_n) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  if (top_n >= 1.0) return order;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double cum = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    cum += probs[order[keep++]];
    if (cum >= top_n) break;
  }
  order.resize(keep);
  return order;
}

SampledSequence sample_sequence(const PolicyParams& params, AgentId role, std::span<const double> context,
                                const SamplingConfig& cfg, Rng& rng) {
  check_call(params, role, context);
  validate_sampling(cfg);
  if (cfg.max_len > params.max_positions) throw std::invalid_argument("sampling: max_len exceeds max_positions");
  const auto base = context_logits(params, role, context);

  SampledSequence out;
  std::optional<Token> prev;
  for (std::size_t pos = 0; pos < cfg.max_len; ++pos) {
    const auto logits = add_step_rows(params, role, base, pos, prev);
    const auto logp = log_softmax(logits);

    std::vector<double> scaled(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) scaled[j] = logits[j] / cfg.temperature;
    const auto slogp = log_softmax(scaled);
    std::vector<double> probs(slogp.size());
    for (std::size_t j = 0; j < slogp.size(); ++j) probs[j] = std::exp(slogp[j]);

    const auto kept = nucleus(probs, cfg.top_n);
    double mass = 0.0;
    for (auto j : kept) mass += probs[j];
    double u = uniform01(rng) * mass;
    std::size_t chosen = kept.back();
    for (auto j : kept) {
      if (u < probs[j]) {
        chosen = j;
        break;
      }
      u -= probs[j];
    }
    const auto tok = static_cast<Token>(chosen);
    out.tokens.push_back(tok);
    out.logps.push_back(logp[chosen]);
    if (tok == cfg.stop_token) break;
    prev = tok;
  }
  return out;
}

std::vector<Token> greedy_sequence(const PolicyParams& params, AgentId role, std::span<const double> context,
                                   std::size_t max_len, Token stop_token) {
  check_call(params, role, context);
  if (max_len > params.max_positions) throw std::invalid_argument("greedy: max_len exceeds max_positions");
  const auto base = context_logits(params, role, context);
  std::vector<Token> out;
  std::optional<Token> prev;
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    const auto logits = add_step_rows(params, role, base, pos, prev);
    const auto tok = static_cast<Token>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    out.push_back(tok);
    if (tok == stop_token) break;
    prev = tok;
  }
  return out;
}

std::vector<double> sequence_log_prob(const PolicyParams& params, AgentId role, std::span<const double> context,
                                      std::span<const Token> sequence) {
  check_call(params, role, context);
  check_sequence(params, role, sequence);
  const auto base = context_logits(params, role, context);
  std::vector<double> out;
  out.reserve(sequence.size());
  std::optional<Token> prev;
  for (std::size_t pos = 0; pos < sequence.size(); ++pos) {
    const auto logp = log_softmax(add_step_rows(params, role, base, pos, prev));
    out.push_back(logp[static_cast<std::size_t>(sequence[pos])]);
    prev = sequence[pos];
  }
  return out;
}

void accumulate_weighted_grad(const PolicyParams& params, AgentId role, std::span<const double> context,
                              std::span<const Token> sequence, std::span<const double> token_weights,
                              std::span<double> grad) {
  check_call(params, role, context);
  check_sequence(params, role, sequence);
  if (token_weights.size() != sequence.size()) throw std::invalid_argument("policy: token weight length mismatch");
  if (grad.size() != params.weights.size()) throw std::invalid_argument("policy: gradient shape mismatch");
  const auto base = context_logits(params, role, context);
  std::optional<Token> prev;
  std::vector<double> dlogits(params.vocab_size);
  for (std::size_t pos = 0; pos < sequence.size(); ++pos) {
    const auto logp = log_softmax(add_step_rows(params, role, base, pos, prev));
    const double w = token_weights[pos];
    if (w != 0.0) {
      // d log p_o / d z_j = [j == o] - p_j
      for (std::size_t j = 0; j < dlogits.size(); ++j) dlogits[j] = -w * std::exp(logp[j]);
      dlogits[static_cast<std::size_t>(sequence[pos])] += w;
      add_outer(params, role, context, pos, prev, dlogits, grad);
    }
    prev = sequence[pos];
  }
}

std::vector<double> grad_log_prob(const PolicyParams& params, AgentId role, std::span<const double> context,
                                  std::span<const Token> sequence) {
  std::vector<double> grad(params.weights.size(), 0.0);
  const std::vector<double> ones(sequence.size(), 1.0);
  accumulate_weighted_grad(params, role, context, sequence, ones, grad);
  return grad;
}

void accumulate_logit_grad(const PolicyParams& params, AgentId role, std::span<const double> context,
                           std::size_t position, std::optional<Token> prev, std::span<const double> dlogits,
                           std::span<double> grad) {
  check_call(params, role, context);
  if (dlogits.size() != params.vocab_size) throw std::invalid_argument("policy: dlogits length mismatch");
  if (grad.size() != params.weights.size()) throw std::invalid_argument("policy: gradient shape mismatch");
  if (position >= params.max_positions) throw std::out_of_range("policy: position beyond max_positions");
  add_outer(params, role, context, position, prev, dlogits, grad);
}

PolicyParams apply_update(const PolicyParams& params, std::span<const double> gradient, double learning_rate) {
  if (gradient.size() != params.weights.size()) throw std::invalid_argument("apply_update: shape mismatch");
  if (!std::isfinite(learning_rate)) throw std::domain_error("apply_update: non-finite learning rate");
  PolicyParams out = params;
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    if (!std::isfinite(gradient[i])) throw std::domain_error("apply_update: non-finite gradient");
    out.weights[i] += learning_rate * gradient[i];
  }
  return out;
}

}  // namespace mhgpo

#include "mhgpo/reward.hpp"

#include <cctype>
#include <sstream>

namespace mhgpo {

double output_f1(std::span<const Token> a, std::span<const Token> b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  return f1_score(a, b);
}

std::vector<std::string> normalize_answer(const std::string& text) {
  std::string lowered = text;
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lowered);
  std::vector<std::string> tokens;
  for (std::string t; in >> t;) tokens.push_back(t);
  return tokens;
}

double f1_score(const std::string& prediction, const std::string& gold) {
  const auto p = normalize_answer(prediction);
  const auto g = normalize_answer(gold);
  return f1_score<std::string>(p, g);
}

double exact_match(const std::string& prediction, const std::string& gold) {
  const auto p = normalize_answer(prediction);
  const auto g = normalize_answer(gold);
  return exact_match<std::string>(p, g);
}

double accuracy(const std::string& prediction, const std::string& gold) {
  const auto p = normalize_answer(prediction);
  const auto g = normalize_answer(gold);
  return accuracy<std::string>(p, g);
}

std::vector<RewardRecord> propagate_shared_rewards(const QuestionRollout& rollout, const MasTopology& topology,
                                                   std::span<const double> final_rewards) {
  if (final_rewards.size() != rollout.trajectories.size()) {
    throw std::invalid_argument("propagate: need one final reward per trajectory");
  }
  const std::size_t n = rollout.pairs.size();
  std::vector<RewardRecord> out(n);
  std::vector<bool> done(n, false);

  for (std::size_t t = 0; t < rollout.trajectories.size(); ++t) {
    const auto& steps = rollout.trajectories[t].steps;
    if (steps.empty()) throw std::logic_error("propagate: empty trajectory");
    const std::size_t tail = steps.back();
    if (!topology.is_terminal(rollout.pairs[tail].agent_id)) {
      throw std::logic_error("propagate: trajectory does not end at the terminal agent");
    }
    out[tail].shared = final_rewards[t];
    done[tail] = true;
  }

  std::vector<std::vector<std::size_t>> children(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (rollout.pairs[j].parent) children[*rollout.pairs[j].parent].push_back(j);
  }

  for (auto agent = static_cast<AgentId>(topology.size()); agent >= 1; --agent) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto& p = rollout.pairs[j];
      if (p.agent_id != agent) continue;
      out[j].pair = j;
      if (topology.is_terminal(agent)) {
        if (!done[j]) throw std::logic_error("propagate: terminal pair outside every trajectory");
        continue;
      }
      if (children[j].empty()) {
        throw std::logic_error("propagate: non-terminal pair " + std::to_string(j) + " has no successor");
      }
      double sum = 0.0;
      for (std::size_t c : children[j]) sum += out[c].shared;
      out[j].shared = sum / static_cast<double>(children[j].size());
      done[j] = true;
    }
  }
  for (std::size_t j = 0; j < n; ++j) out[j].total = out[j].shared + out[j].specific;
  return out;
}

PenaltyConfig penalty_config(const EnvConfig& env) {
  PenaltyConfig c;
  c.max_queries = env.max_queries;
  c.answer_length_threshold = env.answer_length_threshold;
  return c;
}

double agent_specific_penalty(AgentId agent, const OutputFlags& flags, const PenaltyConfig& cfg) {
  switch (agent) {
    case 1:
      return flags.query_count > cfg.max_queries ? cfg.rewriter_penalty : 0.0;
    case 2:
      return (flags.duplicate_selection || flags.out_of_range_selection) ? cfg.reranker_penalty : 0.0;
    case 3:
      return flags.answer_length > cfg.answer_length_threshold ? cfg.answerer_penalty : 0.0;
    default:
      return 0.0;
  }
}

std::vector<RewardRecord> score_rollout(const QuestionRollout& rollout, const MasEnvironment& env,
                                        std::span<const Token> gold, const PenaltyConfig& penalties,
                                        std::vector<double>* final_rewards) {
  std::vector<double> finals;
  finals.reserve(rollout.trajectories.size());
  for (const auto& t : rollout.trajectories) finals.push_back(f1_score<Token>(t.final_output, gold));
  auto records = propagate_shared_rewards(rollout, env.topology(), finals);
  for (std::size_t j = 0; j < records.size(); ++j) {
    const auto& p = rollout.pairs[j];
    records[j].specific = agent_specific_penalty(p.agent_id, env.output_flags(p.agent_id, p.output_seq), penalties);
    records[j].total = records[j].shared + records[j].specific;
  }
  if (final_rewards) *final_rewards = std::move(finals);
  return records;
}

}  // namespace mhgpo

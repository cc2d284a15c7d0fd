#include "mhgpo/metrics.hpp"

#include <stdexcept>

#include "mhgpo/reward.hpp"

namespace mhgpo {

double intra_group_similarity(std::span<const std::vector<Token>> outputs) {
  if (outputs.size() < 2) throw std::invalid_argument("intra_group_similarity: need at least two outputs");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    for (std::size_t j = i + 1; j < outputs.size(); ++j) {
      sum += output_f1(outputs[i], outputs[j]);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

double intra_group_similarity(std::span<const RolloutPair* const> group, Token stop_token) {
  std::vector<std::vector<Token>> outputs;
  outputs.reserve(group.size());
  for (const auto* p : group) {
    const auto body = content_tokens(p->output_seq, stop_token);
    outputs.emplace_back(body.begin(), body.end());
  }
  return intra_group_similarity(outputs);
}

EvalSummary evaluate(const Decoder& decode, const MasEnvironment& env, std::span<const QaItem> questions) {
  if (questions.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  EvalSummary s;
  for (const auto& q : questions) {
    EnvState state = env.reset(q);
    std::vector<Token> prev;
    while (const auto agent = env.next_agent(state)) {
      const Prompt prompt = env.process_prompt(state, *agent, prev);
      prev = decode(*agent, prompt);
      state = prompt.state;
    }
    const auto answer = env.final_answer(prev);
    s.f1 += f1_score<Token>(answer, q.gold);
    s.em += exact_match<Token>(answer, q.gold);
    s.acc += accuracy<Token>(answer, q.gold);
  }
  s.questions = questions.size();
  const auto n = static_cast<double>(questions.size());
  s.f1 /= n;
  s.em /= n;
  s.acc /= n;
  return s;
}

EvalSummary evaluate_greedy(const PolicyParams& params, const MasEnvironment& env,
                            std::span<const QaItem> questions) {
  if (params.vocab_size != env.policy_vocab()) {
    throw std::invalid_argument("evaluate: checkpoint vocab " + std::to_string(params.vocab_size) +
                                " does not match environment vocab " + std::to_string(env.policy_vocab()));
  }
  if (params.context_dim != env.context_dim() || params.num_roles != env.topology().size()) {
    throw std::invalid_argument("evaluate: checkpoint shape does not match environment");
  }
  const Decoder greedy = [&](AgentId agent, const Prompt& prompt) {
    return greedy_sequence(params, agent, prompt.context, env.topology().role(agent).max_len, env.stop_token());
  };
  return evaluate(greedy, env, questions);
}

EvalSummary evaluate_oracle(const SearchEnv& env, std::span<const QaItem> questions) {
  const Decoder oracle = [&](AgentId agent, const Prompt& prompt) {
    // The oracle acts on the state its own prompt was built from.
    EnvState acting = prompt.state;
    acting.stage = agent;
    return env.oracle_output(agent, acting);
  };
  return evaluate(oracle, env, questions);
}

}  // namespace mhgpo

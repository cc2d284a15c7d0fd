#include "mhgpo/core_types.hpp"

#include <algorithm>
#include <stdexcept>

namespace mhgpo {

std::size_t MasTopology::max_output_len() const {
  std::size_t out = 0;
  for (const auto& a : agents) out = std::max(out, a.max_len);
  return out;
}

std::vector<AgentId> MasTopology::successors(AgentId id) const {
  if (id < 1 || id >= static_cast<AgentId>(agents.size())) return {};
  return {id + 1};
}

const MasTopology& validate_topology(const MasTopology& topology) {
  if (topology.agents.empty()) {
    throw std::invalid_argument("topology: agent list is empty");
  }
  for (std::size_t i = 0; i < topology.agents.size(); ++i) {
    const auto& a = topology.agents[i];
    if (a.id != static_cast<AgentId>(i + 1)) {
      throw std::invalid_argument("topology: agent ids must be consecutive 1..n, got " +
                                  std::to_string(a.id) + " at position " + std::to_string(i + 1));
    }
    if (a.max_len == 0) {
      throw std::invalid_argument("topology: agent " + std::to_string(a.id) + " has max_len 0");
    }
  }
  return topology;
}

MasTopology search_topology(std::size_t rewriter_len, std::size_t reranker_len,
                            std::size_t answerer_len) {
  return MasTopology{{{1, "rewriter", rewriter_len},
                      {2, "reranker", reranker_len},
                      {3, "answerer", answerer_len}}};
}

std::string to_string(const GroupKey& key) {
  std::string s = "(";
  s += key.question_id ? "q" + std::to_string(*key.question_id) : "q*";
  s += ",";
  s += key.agent_id ? "a" + std::to_string(*key.agent_id) : "a*";
  if (key.batch_bucket) s += ",b" + std::to_string(*key.batch_bucket);
  s += ")";
  return s;
}

std::vector<std::size_t> QuestionRollout::successors(std::size_t pair_index) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    if (pairs[j].parent && *pairs[j].parent == pair_index) out.push_back(j);
  }
  return out;
}

std::span<const Token> content_tokens(std::span<const Token> seq, Token stop_token) {
  if (!seq.empty() && seq.back() == stop_token) return seq.first(seq.size() - 1);
  return seq;
}

}  // namespace mhgpo

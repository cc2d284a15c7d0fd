#ifndef MHGPO_CORE_TYPES_HPP_
#define MHGPO_CORE_TYPES_HPP_

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mhgpo {

using Token = std::int32_t;
using AgentId = int;  // 1-based role id

struct AgentRole {
  AgentId id = 1;
  std::string name;
  std::size_t max_len = 8;  // output-sequence length cap, stop token included
};

// Ordered chain A_1 -> A_2 -> ... -> A_n. Agent k's output feeds only agent k+1.
struct MasTopology {
  std::vector<AgentRole> agents;

  std::size_t size() const { return agents.size(); }
  const AgentRole& role(AgentId id) const { return agents.at(static_cast<std::size_t>(id - 1)); }
  std::size_t max_output_len() const;
  // Direct successors of an agent; a chain has at most one.
  std::vector<AgentId> successors(AgentId id) const;
  bool is_terminal(AgentId id) const { return id == static_cast<AgentId>(agents.size()); }
};

// Throws std::invalid_argument on an empty chain, ids that are not 1..n in
// order, or a zero max_len.
const MasTopology& validate_topology(const MasTopology& topology);

// The rewriter -> reranker -> answerer chain used by the search simulator.
MasTopology search_topology(std::size_t rewriter_len = 6, std::size_t reranker_len = 4,
                            std::size_t answerer_len = 10);

// Groupmates iff every field compares equal, engaged-ness included. Pairs
// produced by fork_on carry (question_id, agent_id). Singleton regrouping
// drops question_id and sets batch_bucket; the pooled variant drops agent_id
// as well.
struct GroupKey {
  std::optional<std::size_t> question_id;
  std::optional<AgentId> agent_id;
  std::optional<std::size_t> batch_bucket;

  auto operator<=>(const GroupKey&) const = default;
  bool operator==(const GroupKey&) const = default;

  static GroupKey per_agent(std::size_t question_id, AgentId agent) {
    return GroupKey{question_id, agent, std::nullopt};
  }
};

std::string to_string(const GroupKey& key);

struct RolloutPair {
  std::size_t question_id = 0;
  AgentId agent_id = 1;
  std::vector<double> input_ctx;
  std::vector<Token> output_seq;
  std::vector<double> token_logps;  // same length as output_seq
  std::optional<GroupKey> group_key;
  // Branch index for pairs at or after the fork point; empty for the shared prefix.
  std::optional<std::size_t> trajectory_id;
  // Pair whose output this pair's input was built from (index into the pool).
  std::optional<std::size_t> parent;
  AgentId fork_agent = 1;
  // IS drops the pairs of agents other than the fork agent after reward propagation.
  bool kept = true;
  // Set by singleton regrouping for pairs that did not land in a full bucket.
  bool regroup_excluded = false;
};

struct Trajectory {
  std::size_t question_id = 0;
  std::vector<std::size_t> steps;  // indices into the owning pool, agent order
  std::vector<Token> final_output;
};

// Pairs of one fork_on invocation. Prefix pairs are stored once and shared by
// every trajectory that passes through them.
struct QuestionRollout {
  std::size_t question_id = 0;
  AgentId fork_agent = 1;
  std::vector<RolloutPair> pairs;
  std::vector<Trajectory> trajectories;

  std::vector<std::size_t> successors(std::size_t pair_index) const;
};

// Strips a trailing stop token.
std::span<const Token> content_tokens(std::span<const Token> seq, Token stop_token);

}  // namespace mhgpo

#endif  // MHGPO_CORE_TYPES_HPP_

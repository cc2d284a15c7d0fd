#ifndef MHGPO_ENV_SEARCHSIM_HPP_
#define MHGPO_ENV_SEARCHSIM_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mhgpo/core_types.hpp"

namespace mhgpo {

struct QaItem {
  std::size_t question_id = 0;
  std::vector<Token> question;
  std::vector<Token> gold;  // a_golden
};

// Per-trajectory environment state. stage is the agent that acts next;
// stage == n + 1 means terminal.
struct EnvState {
  std::size_t question_id = 0;
  AgentId stage = 1;
  std::vector<std::size_t> retrieved;  // doc ids, retrieval rank order
  std::vector<std::size_t> selected;   // doc ids picked by the reranker

  bool operator==(const EnvState&) const = default;
};

// Format facts about one agent output, consumed by the penalty rules.
struct OutputFlags {
  std::size_t query_count = 0;
  bool duplicate_selection = false;
  bool out_of_range_selection = false;
  std::size_t answer_length = 0;
};

struct Prompt {
  std::vector<double> context;
  EnvState state;
  OutputFlags prev_flags;  // flags of the output consumed to build this prompt
};

// The MAS transition interface used by the rollout samplers.
class MasEnvironment {
 public:
  virtual ~MasEnvironment() = default;

  virtual const MasTopology& topology() const = 0;
  virtual std::size_t context_dim() const = 0;
  // Output alphabet of the shared policy, stop token included.
  virtual std::size_t policy_vocab() const = 0;
  virtual Token stop_token() const = 0;

  virtual EnvState reset(const QaItem& question) const = 0;
  virtual std::optional<AgentId> next_agent(const EnvState& state) const = 0;
  virtual Prompt process_prompt(const EnvState& state, AgentId agent, std::span<const Token> prev_output) const = 0;
  virtual OutputFlags output_flags(AgentId agent, std::span<const Token> output) const = 0;
  virtual std::vector<Token> final_answer(std::span<const Token> last_output) const;
  // Tokens the agent may emit (policy_vocab entries); empty means all.
  virtual std::vector<bool> output_alphabet(AgentId agent) const;
};

struct EnvConfig {
  std::size_t vocab_size = 16;
  std::size_t key_tokens = 10;  // ids [0, key_tokens) are entity keys, the rest answer tokens
  std::size_t num_docs = 32;
  std::size_t doc_len = 3;
  std::size_t answer_tokens_per_doc = 1;
  std::size_t num_questions = 200;
  std::size_t eval_questions = 50;
  std::size_t retriever_k = 8;
  std::size_t answer_length_threshold = 8;
  std::size_t max_queries = 4;
  std::size_t rewriter_max_len = 6;
  std::size_t reranker_max_len = 4;
  std::size_t answerer_max_len = 10;
};

void to_json(nlohmann::json& j, const EnvConfig& c);
void from_json(const nlohmann::json& j, EnvConfig& c);

struct SynthCorpus {
  std::size_t vocab_size = 0;
  std::vector<std::vector<Token>> docs;
  std::vector<std::array<std::size_t, 2>> links;  // question id -> supporting doc ids
};

struct Dataset {
  EnvConfig config;
  std::uint64_t seed = 0;
  SynthCorpus corpus;
  std::vector<QaItem> train;
  std::vector<QaItem> eval;
};

// Deterministic in (config, seed). Questions are two-hop: their key tokens are
// the union of two supporting docs that share one key, so the full key set
// ranks both supporting docs above every other doc except possibly one.
Dataset generate_dataset(const EnvConfig& config, std::uint64_t seed);

nlohmann::json dataset_to_json(const Dataset& dataset);
Dataset dataset_from_json(const nlohmann::json& j);
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

// Multiset overlap |query ∩ doc|.
std::size_t overlap(std::span<const Token> query, std::span<const Token> doc);

// Top-k doc ids by overlap, ties by ascending id.
std::vector<std::size_t> retrieve(const SynthCorpus& corpus, std::span<const Token> query, std::size_t k);

// Rewriter -> reranker -> answerer. The shared policy emits tokens 0..vocab_size-1
// plus a stop token with id vocab_size. Reranker tokens are slot indices into
// the retrieved list.
class SearchEnv final : public MasEnvironment {
 public:
  explicit SearchEnv(Dataset dataset);

  const MasTopology& topology() const override { return topology_; }
  std::size_t context_dim() const override { return 2 * cfg().vocab_size + cfg().retriever_k + 1; }
  std::size_t policy_vocab() const override { return cfg().vocab_size + 1; }
  Token stop_token() const override { return static_cast<Token>(cfg().vocab_size); }

  EnvState reset(const QaItem& question) const override;
  std::optional<AgentId> next_agent(const EnvState& state) const override;
  Prompt process_prompt(const EnvState& state, AgentId agent, std::span<const Token> prev_output) const override;
  OutputFlags output_flags(AgentId agent, std::span<const Token> output) const override;
  // Reranker: slot indices 0..k-1 and stop. Others: the whole vocab.
  std::vector<bool> output_alphabet(AgentId agent) const override;

  const Dataset& dataset() const { return dataset_; }
  const EnvConfig& cfg() const { return dataset_.config; }
  const QaItem& question(std::size_t question_id) const;

  // Scripted outputs that solve the question exactly.
  std::vector<Token> oracle_output(AgentId agent, const EnvState& state) const;

  // Context block offsets.
  std::size_t question_block() const { return 0; }
  std::size_t docs_block() const { return cfg().vocab_size; }
  std::size_t slot_block() const { return 2 * cfg().vocab_size; }
  std::size_t bias_feature() const { return 2 * cfg().vocab_size + cfg().retriever_k; }

 private:
  Dataset dataset_;
  MasTopology topology_;
};

}  // namespace mhgpo

#endif  // MHGPO_ENV_SEARCHSIM_HPP_

#include "mhgpo/env_searchsim.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "mhgpo/rng.hpp"

namespace mhgpo {

std::vector<Token> MasEnvironment::final_answer(std::span<const Token> last_output) const {
  const auto c = content_tokens(last_output, stop_token());
  return {c.begin(), c.end()};
}

std::vector<bool> MasEnvironment::output_alphabet(AgentId) const { return {}; }

void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"key_tokens", c.key_tokens},
                     {"num_docs", c.num_docs},
                     {"doc_len", c.doc_len},
                     {"answer_tokens_per_doc", c.answer_tokens_per_doc},
                     {"num_questions", c.num_questions},
                     {"eval_questions", c.eval_questions},
                     {"retriever_k", c.retriever_k},
                     {"answer_length_threshold", c.answer_length_threshold},
                     {"max_queries", c.max_queries},
                     {"rewriter_max_len", c.rewriter_max_len},
                     {"reranker_max_len", c.reranker_max_len},
                     {"answerer_max_len", c.answerer_max_len}};
}

void from_json(const nlohmann::json& j, EnvConfig& c) {
  const EnvConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.key_tokens = j.value("key_tokens", d.key_tokens);
  c.num_docs = j.value("num_docs", d.num_docs);
  c.doc_len = j.value("doc_len", d.doc_len);
  c.answer_tokens_per_doc = j.value("answer_tokens_per_doc", d.answer_tokens_per_doc);
  c.num_questions = j.value("num_questions", d.num_questions);
  c.eval_questions = j.value("eval_questions", d.eval_questions);
  c.retriever_k = j.value("retriever_k", d.retriever_k);
  c.answer_length_threshold = j.value("answer_length_threshold", d.answer_length_threshold);
  c.max_queries = j.value("max_queries", d.max_queries);
  c.rewriter_max_len = j.value("rewriter_max_len", d.rewriter_max_len);
  c.reranker_max_len = j.value("reranker_max_len", d.reranker_max_len);
  c.answerer_max_len = j.value("answerer_max_len", d.answerer_max_len);
}

std::size_t overlap(std::span<const Token> query, std::span<const Token> doc) {
  std::map<Token, std::size_t> counts;
  for (Token t : doc) ++counts[t];
  std::size_t n = 0;
  for (Token t : query) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++n;
    }
  }
  return n;
}

std::vector<std::size_t> retrieve(const SynthCorpus& corpus, std::span<const Token> query, std::size_t k) {
  if (corpus.docs.empty()) throw std::invalid_argument("retrieve: empty corpus");
  if (k > corpus.docs.size()) throw std::invalid_argument("retrieve: k exceeds doc count");
  std::vector<std::pair<std::size_t, std::size_t>> scored;  // (overlap, id)
  scored.reserve(corpus.docs.size());
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) scored.emplace_back(overlap(query, corpus.docs[d]), d);
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
  return out;
}

namespace {

void validate_env_config(const EnvConfig& c) {
  if (c.vocab_size < 8) throw std::invalid_argument("env: vocab_size must be >= 8");
  if (c.num_docs < 4) throw std::invalid_argument("env: num_docs must be >= 4");
  if (c.retriever_k < 2 || c.retriever_k > c.num_docs) {
    throw std::invalid_argument("env: retriever_k must be in [2, num_docs]");
  }
  if (c.retriever_k > c.vocab_size) throw std::invalid_argument("env: retriever_k slots must fit in the vocab");
  if (c.answer_tokens_per_doc == 0) throw std::invalid_argument("env: answer_tokens_per_doc must be >= 1");
  if (c.answer_tokens_per_doc >= c.doc_len) {
    throw std::invalid_argument("env: answer length does not fit in a document next to its keys");
  }
  const std::size_t keys_per_doc = c.doc_len - c.answer_tokens_per_doc;
  if (keys_per_doc < 2) throw std::invalid_argument("env: documents need at least 2 key tokens");
  if (c.key_tokens <= keys_per_doc || c.key_tokens >= c.vocab_size) {
    throw std::invalid_argument("env: key_tokens must exceed keys per doc and leave answer tokens");
  }
  if (c.vocab_size - c.key_tokens < 2 * c.answer_tokens_per_doc) {
    throw std::invalid_argument("env: answer token class too small for two distinct answers");
  }
  if (c.num_questions == 0) throw std::invalid_argument("env: num_questions must be >= 1");
  if (c.rewriter_max_len == 0 || c.reranker_max_len == 0 || c.answerer_max_len == 0) {
    throw std::invalid_argument("env: agent max lengths must be positive");
  }
}

std::vector<Token> sample_distinct(Rng& rng, Token lo, Token hi, std::size_t count) {
  std::vector<Token> pool(static_cast<std::size_t>(hi - lo));
  std::iota(pool.begin(), pool.end(), lo);
  shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

Dataset generate_dataset(const EnvConfig& config, std::uint64_t seed) {
  validate_env_config(config);
  Rng rng = make_stream(seed, {0x5eedULL});
  const std::size_t keys_per_doc = config.doc_len - config.answer_tokens_per_doc;
  const auto key_hi = static_cast<Token>(config.key_tokens);
  const auto vocab_hi = static_cast<Token>(config.vocab_size);

  Dataset ds;
  ds.config = config;
  ds.seed = seed;
  ds.corpus.vocab_size = config.vocab_size;

  std::vector<std::vector<Token>> keys;
  std::vector<std::vector<Token>> answers;
  std::set<std::vector<Token>> used_keys;
  for (std::size_t d = 0; d < config.num_docs; ++d) {
    std::vector<Token> k;
    for (int attempt = 0; attempt < 64; ++attempt) {
      k = sample_distinct(rng, 0, key_hi, keys_per_doc);
      if (!used_keys.contains(k)) break;
    }
    used_keys.insert(k);
    keys.push_back(k);
    answers.push_back(sample_distinct(rng, key_hi, vocab_hi, config.answer_tokens_per_doc));
    std::vector<Token> doc = keys.back();
    doc.insert(doc.end(), answers.back().begin(), answers.back().end());
    ds.corpus.docs.push_back(std::move(doc));
  }

  struct Candidate {
    std::size_t a, b;
    std::vector<Token> question;
  };
  std::vector<Candidate> candidates;
  for (std::size_t a = 0; a < config.num_docs; ++a) {
    for (std::size_t b = a + 1; b < config.num_docs; ++b) {
      std::vector<Token> shared;
      std::set_intersection(keys[a].begin(), keys[a].end(), keys[b].begin(), keys[b].end(),
                            std::back_inserter(shared));
      if (shared.size() != 1) continue;
      std::vector<Token> common_answers;
      std::set_intersection(answers[a].begin(), answers[a].end(), answers[b].begin(), answers[b].end(),
                            std::back_inserter(common_answers));
      if (!common_answers.empty()) continue;
      std::vector<Token> q;
      std::set_union(keys[a].begin(), keys[a].end(), keys[b].begin(), keys[b].end(), std::back_inserter(q));
      const auto top = retrieve(ds.corpus, q, config.retriever_k);
      if (std::find(top.begin(), top.end(), a) == top.end() || std::find(top.begin(), top.end(), b) == top.end()) {
        continue;
      }
      candidates.push_back({a, b, std::move(q)});
    }
  }
  if (candidates.empty()) throw std::runtime_error("env: no answerable two-hop question for this config/seed");
  shuffle(candidates.begin(), candidates.end(), rng);

  // Eval questions come from doc pairs never used for training whenever the
  // candidate pool allows it.
  std::size_t eval_pool = 0;
  if (config.eval_questions > 0) {
    eval_pool = candidates.size() >= 2 ? std::min(config.eval_questions, candidates.size() / 2) : candidates.size();
  }
  const std::size_t train_begin = candidates.size() > eval_pool ? eval_pool : 0;

  auto make_item = [&](std::size_t qid, const Candidate& c) {
    QaItem item;
    item.question_id = qid;
    item.question = c.question;
    item.gold = answers[c.a];
    item.gold.insert(item.gold.end(), answers[c.b].begin(), answers[c.b].end());
    std::sort(item.gold.begin(), item.gold.end());
    return item;
  };

  const std::size_t train_pool = candidates.size() - train_begin;
  ds.corpus.links.resize(config.num_questions + config.eval_questions);
  for (std::size_t i = 0; i < config.num_questions; ++i) {
    const auto& c = candidates[train_begin + i % train_pool];
    ds.train.push_back(make_item(i, c));
    ds.corpus.links[i] = {c.a, c.b};
  }
  for (std::size_t i = 0; i < config.eval_questions; ++i) {
    const std::size_t qid = config.num_questions + i;
    const auto& c = candidates[i % eval_pool];
    ds.eval.push_back(make_item(qid, c));
    ds.corpus.links[qid] = {c.a, c.b};
  }
  return ds;
}

namespace {

nlohmann::json items_to_json(const std::vector<QaItem>& items) {
  auto arr = nlohmann::json::array();
  for (const auto& q : items) {
    arr.push_back({{"id", q.question_id}, {"question", q.question}, {"gold", q.gold}});
  }
  return arr;
}

std::vector<QaItem> items_from_json(const nlohmann::json& arr) {
  std::vector<QaItem> out;
  for (const auto& j : arr) {
    out.push_back({j.at("id").get<std::size_t>(), j.at("question").get<std::vector<Token>>(),
                   j.at("gold").get<std::vector<Token>>()});
  }
  return out;
}

}  // namespace

nlohmann::json dataset_to_json(const Dataset& ds) {
  nlohmann::json links = nlohmann::json::array();
  for (const auto& l : ds.corpus.links) links.push_back({l[0], l[1]});
  return {{"format", "mhgpo-dataset-v1"},
          {"seed", ds.seed},
          {"config", ds.config},
          {"corpus", {{"vocab_size", ds.corpus.vocab_size}, {"docs", ds.corpus.docs}, {"links", links}}},
          {"train", items_to_json(ds.train)},
          {"eval", items_to_json(ds.eval)}};
}

Dataset dataset_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != "mhgpo-dataset-v1") {
    throw std::runtime_error("dataset: unrecognized format tag");
  }
  Dataset ds;
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.config = j.at("config").get<EnvConfig>();
  const auto& c = j.at("corpus");
  ds.corpus.vocab_size = c.at("vocab_size").get<std::size_t>();
  ds.corpus.docs = c.at("docs").get<std::vector<std::vector<Token>>>();
  for (const auto& l : c.at("links")) ds.corpus.links.push_back({l.at(0).get<std::size_t>(), l.at(1).get<std::size_t>()});
  ds.train = items_from_json(j.at("train"));
  ds.eval = items_from_json(j.at("eval"));
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dataset: cannot write " + path);
  out << dataset_to_json(dataset).dump(1) << '\n';
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset: cannot read " + path);
  return dataset_from_json(nlohmann::json::parse(in));
}

SearchEnv::SearchEnv(Dataset dataset)
    : dataset_(std::move(dataset)),
      topology_(search_topology(dataset_.config.rewriter_max_len, dataset_.config.reranker_max_len,
                                dataset_.config.answerer_max_len)) {
  validate_env_config(dataset_.config);
  validate_topology(topology_);
  if (dataset_.corpus.docs.size() < dataset_.config.retriever_k) {
    throw std::invalid_argument("env: corpus smaller than retriever_k");
  }
}

const QaItem& SearchEnv::question(std::size_t question_id) const {
  const auto& train = dataset_.train;
  if (question_id < train.size() && train[question_id].question_id == question_id) return train[question_id];
  for (const auto& q : train) {
    if (q.question_id == question_id) return q;
  }
  for (const auto& q : dataset_.eval) {
    if (q.question_id == question_id) return q;
  }
  throw std::out_of_range("env: unknown question id " + std::to_string(question_id));
}

EnvState SearchEnv::reset(const QaItem& question) const {
  EnvState s;
  s.question_id = question.question_id;
  s.stage = 1;
  return s;
}

std::optional<AgentId> SearchEnv::next_agent(const EnvState& state) const {
  if (state.stage >= 1 && state.stage <= static_cast<AgentId>(topology_.size())) return state.stage;
  return std::nullopt;
}

OutputFlags SearchEnv::output_flags(AgentId agent, std::span<const Token> output) const {
  const auto body = content_tokens(output, stop_token());
  OutputFlags f;
  switch (agent) {
    case 1:
      f.query_count = body.size();
      break;
    case 2: {
      std::set<Token> seen;
      for (Token t : body) {
        if (t < 0 || static_cast<std::size_t>(t) >= cfg().retriever_k) f.out_of_range_selection = true;
        if (!seen.insert(t).second) f.duplicate_selection = true;
      }
      break;
    }
    case 3:
      f.answer_length = body.size();
      break;
    default:
      throw std::out_of_range("env: unknown agent " + std::to_string(agent));
  }
  return f;
}

std::vector<bool> SearchEnv::output_alphabet(AgentId agent) const {
  if (agent != 2) return {};
  std::vector<bool> mask(policy_vocab(), false);
  for (std::size_t slot = 0; slot < cfg().retriever_k && slot < mask.size(); ++slot) mask[slot] = true;
  mask[static_cast<std::size_t>(stop_token())] = true;
  return mask;
}

Prompt SearchEnv::process_prompt(const EnvState& state, AgentId agent, std::span<const Token> prev_output) const {
  if (next_agent(state) != agent) {
    throw std::logic_error("env: agent " + std::to_string(agent) + " is not next in the chain");
  }
  const auto& q = question(state.question_id);
  const std::size_t v = cfg().vocab_size;
  Prompt p;
  p.state = state;
  p.context.assign(context_dim(), 0.0);
  for (Token t : q.question) p.context[question_block() + static_cast<std::size_t>(t)] += 1.0;
  p.context[bias_feature()] = 1.0;

  if (agent == 2) {
    const auto queries = content_tokens(prev_output, stop_token());
    p.prev_flags = output_flags(1, prev_output);
    p.state.retrieved = retrieve(dataset_.corpus, queries, cfg().retriever_k);
    for (std::size_t slot = 0; slot < p.state.retrieved.size(); ++slot) {
      const auto& doc = dataset_.corpus.docs[p.state.retrieved[slot]];
      p.context[slot_block() + slot] = static_cast<double>(overlap(q.question, doc));
    }
  } else if (agent == 3) {
    p.prev_flags = output_flags(2, prev_output);
    p.state.selected.clear();
    // Out-of-range and repeated slots are dropped; the flags carry the penalty.
    for (Token t : content_tokens(prev_output, stop_token())) {
      if (t < 0 || static_cast<std::size_t>(t) >= state.retrieved.size()) continue;
      const std::size_t doc = state.retrieved[static_cast<std::size_t>(t)];
      if (std::find(p.state.selected.begin(), p.state.selected.end(), doc) == p.state.selected.end()) {
        p.state.selected.push_back(doc);
      }
    }
    for (std::size_t d : p.state.selected) {
      for (Token t : dataset_.corpus.docs[d]) {
        if (static_cast<std::size_t>(t) < v) p.context[docs_block() + static_cast<std::size_t>(t)] += 1.0;
      }
    }
  }
  p.state.stage = agent + 1;
  return p;
}

std::vector<Token> SearchEnv::oracle_output(AgentId agent, const EnvState& state) const {
  const auto& q = question(state.question_id);
  std::vector<Token> out;
  switch (agent) {
    case 1:
      out = q.question;
      std::sort(out.begin(), out.end());
      break;
    case 2: {
      const auto& link = dataset_.corpus.links.at(state.question_id);
      for (std::size_t slot = 0; slot < state.retrieved.size(); ++slot) {
        if (state.retrieved[slot] == link[0] || state.retrieved[slot] == link[1]) {
          out.push_back(static_cast<Token>(slot));
        }
      }
      break;
    }
    case 3:
      out = q.gold;
      break;
    default:
      throw std::out_of_range("env: unknown agent " + std::to_string(agent));
  }
  out.push_back(stop_token());
  return out;
}

}  // namespace mhgpo

#include "mhgpo/rollout.hpp"

#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

namespace mhgpo {

Strategy parse_strategy(const std::string& name) {
  if (name == "IS" || name == "is") return Strategy::kIndependent;
  if (name == "FoF" || name == "fof") return Strategy::kForkOnFirst;
  if (name == "RR" || name == "rr") return Strategy::kRoundRobin;
  throw std::invalid_argument("unknown rollout strategy '" + name + "' (expected IS, FoF or RR)");
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kIndependent:
      return "IS";
    case Strategy::kForkOnFirst:
      return "FoF";
    case Strategy::kRoundRobin:
      return "RR";
  }
  return "?";
}

RegroupMode parse_regroup_mode(const std::string& name) {
  if (name == "per_partition") return RegroupMode::kPerPartition;
  if (name == "pooled") return RegroupMode::kPooled;
  throw std::invalid_argument("unknown regroup mode '" + name + "' (expected per_partition or pooled)");
}

std::string regroup_mode_name(RegroupMode m) { return m == RegroupMode::kPooled ? "pooled" : "per_partition"; }

void validate_plan(const RolloutPlan& plan, std::size_t num_agents) {
  if (plan.group_size < 1) throw std::invalid_argument("plan: group size must be >= 1");
  if (plan.strategy != Strategy::kRoundRobin) return;
  if (plan.rr_probs.size() != num_agents) {
    throw std::invalid_argument("plan: rr_probs needs one entry per agent");
  }
  double sum = 0.0;
  for (double p : plan.rr_probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("plan: rr_probs must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("plan: rr_probs must sum to 1");
}

SampledSequence AgentRunner::invoke(AgentId agent, std::span<const double> context, Rng& rng) const {
  SamplingConfig cfg = sampling;
  cfg.max_len = env.topology().role(agent).max_len;
  cfg.stop_token = env.stop_token();
  return sample_sequence(params, agent, context, cfg, rng);
}

namespace {

std::size_t push_pair(QuestionRollout& out, const QaItem& q, AgentId agent, std::vector<double> ctx,
                      SampledSequence seq, std::optional<std::size_t> parent,
                      std::optional<std::size_t> branch) {
  RolloutPair p;
  p.question_id = q.question_id;
  p.agent_id = agent;
  p.input_ctx = std::move(ctx);
  p.output_seq = std::move(seq.tokens);
  p.token_logps = std::move(seq.logps);
  p.trajectory_id = branch;
  p.parent = parent;
  p.fork_agent = out.fork_agent;
  out.pairs.push_back(std::move(p));
  return out.pairs.size() - 1;
}

}  // namespace

QuestionRollout fork_on(const QaItem& question, std::size_t group_size, AgentId fork_agent,
                        const AgentRunner& runner, Rng& rng) {
  const auto& env = runner.env;
  if (fork_agent < 1 || fork_agent > static_cast<AgentId>(env.topology().size())) {
    throw std::out_of_range("fork_on: fork agent " + std::to_string(fork_agent) + " not in topology");
  }
  if (group_size < 1) throw std::invalid_argument("fork_on: group size must be >= 1");

  QuestionRollout out;
  out.question_id = question.question_id;
  out.fork_agent = fork_agent;

  EnvState state = env.reset(question);
  std::vector<Token> prev;
  std::vector<std::size_t> prefix;
  while (true) {
    const auto next = env.next_agent(state);
    if (!next) throw std::logic_error("fork_on: chain ended before the fork agent");
    if (*next == fork_agent) break;
    auto prompt = env.process_prompt(state, *next, prev);
    auto seq = runner.invoke(*next, prompt.context, rng);
    prev = seq.tokens;
    const auto parent = prefix.empty() ? std::nullopt : std::optional<std::size_t>(prefix.back());
    prefix.push_back(push_pair(out, question, *next, std::move(prompt.context), std::move(seq), parent, std::nullopt));
    state = std::move(prompt.state);
  }

  const Prompt fork_prompt = env.process_prompt(state, fork_agent, prev);
  const auto fork_parent = prefix.empty() ? std::nullopt : std::optional<std::size_t>(prefix.back());
  for (std::size_t branch = 0; branch < group_size; ++branch) {
    Trajectory traj;
    traj.question_id = question.question_id;
    traj.steps = prefix;

    auto seq = runner.invoke(fork_agent, fork_prompt.context, rng);
    std::vector<Token> out_tokens = seq.tokens;
    std::size_t last = push_pair(out, question, fork_agent, fork_prompt.context, std::move(seq), fork_parent, branch);
    traj.steps.push_back(last);

    EnvState s = fork_prompt.state;
    while (const auto next = env.next_agent(s)) {
      auto prompt = env.process_prompt(s, *next, out_tokens);
      auto step_seq = runner.invoke(*next, prompt.context, rng);
      out_tokens = step_seq.tokens;
      last = push_pair(out, question, *next, std::move(prompt.context), std::move(step_seq), last, branch);
      traj.steps.push_back(last);
      s = std::move(prompt.state);
    }
    traj.final_output = env.final_answer(out_tokens);
    out.trajectories.push_back(std::move(traj));
  }

  for (auto& p : out.pairs) p.group_key = GroupKey::per_agent(question.question_id, p.agent_id);
  return out;
}

QuestionRollout sample_fof(const QaItem& question, std::size_t group_size, const AgentRunner& runner, Rng& rng) {
  const auto entry = runner.env.next_agent(runner.env.reset(question));
  if (!entry) throw std::logic_error("sample_fof: environment has no entry agent");
  return fork_on(question, group_size, *entry, runner, rng);
}

std::vector<QuestionRollout> sample_is(const QaItem& question, std::size_t group_size, const AgentRunner& runner,
                                       Rng& rng) {
  std::vector<QuestionRollout> out;
  const auto n = static_cast<AgentId>(runner.env.topology().size());
  for (AgentId agent = 1; agent <= n; ++agent) {
    auto r = fork_on(question, group_size, agent, runner, rng);
    for (auto& p : r.pairs) p.kept = (p.agent_id == agent);
    out.push_back(std::move(r));
  }
  return out;
}

RegroupSummary regroup_singletons(std::span<RolloutPair* const> singletons, std::size_t group_size, Rng& rng,
                                  RegroupMode mode) {
  RegroupSummary summary;
  if (singletons.empty()) return summary;
  if (group_size < 1) throw std::invalid_argument("regroup: group size must be >= 1");

  std::map<std::pair<AgentId, AgentId>, std::vector<RolloutPair*>> partitions;
  for (RolloutPair* p : singletons) {
    const auto part = mode == RegroupMode::kPooled ? std::pair<AgentId, AgentId>{0, 0}
                                                    : std::pair<AgentId, AgentId>{p->agent_id, p->fork_agent};
    partitions[part].push_back(p);
  }

  std::size_t next_bucket = 0;
  for (auto& [part, members] : partitions) {
    shuffle(members.begin(), members.end(), rng);
    const std::size_t full = members.size() >= 2 ? members.size() / group_size : 0;
    for (std::size_t b = 0; b < full; ++b) {
      const std::size_t bucket = next_bucket++;
      for (std::size_t j = 0; j < group_size; ++j) {
        RolloutPair* p = members[b * group_size + j];
        GroupKey key;
        if (mode == RegroupMode::kPerPartition) key.agent_id = p->agent_id;
        key.batch_bucket = bucket;
        p->group_key = key;
      }
    }
    summary.buckets += full;
    for (std::size_t j = full * group_size; j < members.size(); ++j) {
      members[j]->regroup_excluded = true;
      ++summary.excluded;
    }
  }
  return summary;
}

AgentId sample_fork_agent(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double cum = 0.0;
  AgentId last_positive = 1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = static_cast<AgentId>(i + 1);
    cum += probs[i];
    if (u < cum) return last_positive;
  }
  return last_positive;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min(threads, n);
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

RrBatch sample_rr(std::span<const QaItem> batch, const RolloutPlan& plan, const AgentRunner& runner,
                  const BatchSeeds& seeds, std::size_t threads) {
  if (batch.empty()) throw std::invalid_argument("sample_rr: empty batch");
  validate_plan(plan, runner.env.topology().size());
  if (plan.strategy != Strategy::kRoundRobin) throw std::invalid_argument("sample_rr: plan strategy is not RR");

  RrBatch out;
  out.rollouts.resize(batch.size());
  out.fork_agents.resize(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    Rng fork_rng = seeds.fork_stream(batch[i].question_id);
    Rng rollout_rng = seeds.rollout_stream(batch[i].question_id);
    out.fork_agents[i] = sample_fork_agent(plan.rr_probs, fork_rng);
    out.rollouts[i] = fork_on(batch[i], plan.group_size, out.fork_agents[i], runner, rollout_rng);
  });

  // Batch barrier: singletons are pairs alone in their per-question group.
  std::map<GroupKey, std::size_t> counts;
  for (const auto& r : out.rollouts) {
    for (const auto& p : r.pairs) ++counts[*p.group_key];
  }
  std::vector<RolloutPair*> singles;
  for (auto& r : out.rollouts) {
    for (auto& p : r.pairs) {
      if (counts[*p.group_key] == 1) singles.push_back(&p);
    }
  }
  Rng regroup_rng = seeds.regroup_stream();
  out.regroup = regroup_singletons(singles, plan.group_size, regroup_rng, plan.regroup);
  return out;
}

std::vector<QuestionRollout> sample_batch(std::span<const QaItem> batch, const RolloutPlan& plan,
                                          const AgentRunner& runner, const BatchSeeds& seeds, std::size_t threads) {
  validate_plan(plan, runner.env.topology().size());
  if (plan.strategy == Strategy::kRoundRobin) return sample_rr(batch, plan, runner, seeds, threads).rollouts;

  std::vector<std::vector<QuestionRollout>> per_question(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    Rng rng = seeds.rollout_stream(batch[i].question_id);
    if (plan.strategy == Strategy::kForkOnFirst) {
      per_question[i].push_back(sample_fof(batch[i], plan.group_size, runner, rng));
    } else {
      per_question[i] = sample_is(batch[i], plan.group_size, runner, rng);
    }
  });
  std::vector<QuestionRollout> out;
  for (auto& v : per_question) {
    for (auto& r : v) out.push_back(std::move(r));
  }
  return out;
}

std::map<AgentId, std::size_t> pair_counts(std::span<const QuestionRollout> rollouts) {
  std::map<AgentId, std::size_t> counts;
  for (const auto& r : rollouts) {
    for (const auto& p : r.pairs) {
      if (p.kept) ++counts[p.agent_id];
    }
  }
  return counts;
}

}  // namespace mhgpo

#include "mhgpo/run_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mhgpo {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.contains(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json read_json_file(const std::string& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + what + " '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed " + what + " '" + path + "': " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, {"algorithm", "seed", "dataset_seed", "output_dir", "train", "mappo", "env"}, "config");
  RunConfig cfg;
  TrainConfig& t = cfg.train;
  if (j.contains("algorithm")) t.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
  read(j, "seed", t.seed);
  if (j.contains("dataset_seed")) cfg.dataset_seed = j.at("dataset_seed").get<std::uint64_t>();
  read(j, "output_dir", cfg.output_dir);

  if (j.contains("train")) {
    const json& tj = j.at("train");
    reject_unknown(tj,
                   {"lr", "batch_size", "total_epochs", "max_steps", "ppo_epochs", "clip_eps", "kl_beta", "kl_mode",
                    "kl_anchor", "token_credit", "strategy", "group_size", "rr_probs", "regroup", "top_n",
                    "temperature", "eval_every", "eval_size", "threads"},
                   "config.train");
    read(tj, "lr", t.lr);
    read(tj, "batch_size", t.batch_size);
    read(tj, "total_epochs", t.total_epochs);
    read(tj, "max_steps", t.max_steps);
    read(tj, "ppo_epochs", t.ppo_epochs);
    read(tj, "clip_eps", t.clip_eps);
    read(tj, "kl_beta", t.kl_beta);
    if (tj.contains("kl_mode")) t.kl_mode = parse_kl_mode(tj.at("kl_mode").get<std::string>());
    if (tj.contains("kl_anchor")) t.kl_anchor = parse_kl_anchor(tj.at("kl_anchor").get<std::string>());
    if (tj.contains("token_credit")) t.token_credit = parse_token_credit(tj.at("token_credit").get<std::string>());
    if (tj.contains("strategy")) t.plan.strategy = parse_strategy(tj.at("strategy").get<std::string>());
    read(tj, "group_size", t.plan.group_size);
    read(tj, "rr_probs", t.plan.rr_probs);
    if (tj.contains("regroup")) t.plan.regroup = parse_regroup_mode(tj.at("regroup").get<std::string>());
    read(tj, "top_n", t.sampling.top_n);
    read(tj, "temperature", t.sampling.temperature);
    read(tj, "eval_every", t.eval_every);
    read(tj, "eval_size", t.eval_size);
    read(tj, "threads", t.threads);
  }
  if (j.contains("mappo")) {
    const json& mj = j.at("mappo");
    reject_unknown(mj, {"gamma", "lambda", "critic_lr"}, "config.mappo");
    read(mj, "gamma", t.mappo.gamma);
    read(mj, "lambda", t.mappo.lambda);
    read(mj, "critic_lr", t.mappo.critic_lr);
  }
  if (j.contains("env")) cfg.env = j.at("env").get<EnvConfig>();
  return cfg;
}

ordered_json run_config_to_json(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  ordered_json j;
  j["algorithm"] = algorithm_name(t.algorithm);
  j["seed"] = t.seed;
  j["dataset_seed"] = cfg.data_seed();
  j["output_dir"] = cfg.output_dir;
  ordered_json tj;
  tj["lr"] = t.lr;
  tj["batch_size"] = t.batch_size;
  tj["total_epochs"] = t.total_epochs;
  tj["max_steps"] = t.max_steps;
  tj["ppo_epochs"] = t.ppo_epochs;
  tj["clip_eps"] = t.clip_eps;
  tj["kl_beta"] = t.kl_beta;
  tj["kl_mode"] = kl_mode_name(t.kl_mode);
  tj["kl_anchor"] = kl_anchor_name(t.kl_anchor);
  tj["token_credit"] = token_credit_name(t.token_credit);
  tj["strategy"] = strategy_name(t.plan.strategy);
  tj["group_size"] = t.plan.group_size;
  tj["rr_probs"] = t.plan.rr_probs;
  tj["regroup"] = regroup_mode_name(t.plan.regroup);
  tj["top_n"] = t.sampling.top_n;
  tj["temperature"] = t.sampling.temperature;
  tj["eval_every"] = t.eval_every;
  tj["eval_size"] = t.eval_size;
  tj["threads"] = t.threads;
  j["train"] = tj;
  j["mappo"] = {{"gamma", t.mappo.gamma}, {"lambda", t.mappo.lambda}, {"critic_lr", t.mappo.critic_lr}};
  json env = cfg.env;
  j["env"] = ordered_json::parse(env.dump());
  return j;
}

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path, "config")); }

std::vector<std::string> metrics_columns(Algorithm algorithm, const MasTopology& topology) {
  std::vector<std::string> cols = {"step", "epoch", "mean_total_reward", "mean_shared_reward", "mean_final_reward"};
  for (const auto& r : topology.agents) cols.push_back("penalty_" + r.name);
  for (const auto& r : topology.agents) cols.push_back("similarity_" + r.name);
  for (const char* c : {"objective", "kl", "groups", "excluded_groups", "pairs", "policy_calls",
                        "max_ratio_deviation"}) {
    cols.emplace_back(c);
  }
  if (algorithm == Algorithm::kMappo) cols.emplace_back("critic_loss");
  for (const char* c : {"eval_f1", "eval_em", "eval_acc"}) cols.emplace_back(c);
  return cols;
}

ordered_json metrics_row(const StepRecord& rec, Algorithm algorithm, const MasTopology& topology) {
  const StepStats& s = rec.stats;
  ordered_json row;
  row["step"] = rec.step;
  row["epoch"] = rec.epoch;
  row["mean_total_reward"] = s.mean_total_reward;
  row["mean_shared_reward"] = s.mean_shared_reward;
  row["mean_final_reward"] = s.mean_final_reward;
  for (const auto& r : topology.agents) {
    const auto it = s.mean_penalty.find(r.id);
    row["penalty_" + r.name] = it == s.mean_penalty.end() ? 0.0 : it->second;
  }
  for (const auto& r : topology.agents) {
    const auto it = s.similarity.find(r.id);
    if (it != s.similarity.end() && it->second) {
      row["similarity_" + r.name] = *it->second;
    } else {
      row["similarity_" + r.name] = nullptr;
    }
  }
  row["objective"] = s.objective;
  row["kl"] = s.kl;
  row["groups"] = s.groups;
  row["excluded_groups"] = s.excluded_groups;
  row["pairs"] = s.pairs;
  row["policy_calls"] = s.policy_calls;
  row["max_ratio_deviation"] = s.max_ratio_deviation;
  if (algorithm == Algorithm::kMappo) {
    row["critic_loss"] = s.critic_loss ? ordered_json(*s.critic_loss) : ordered_json(nullptr);
  }
  if (rec.eval) {
    row["eval_f1"] = rec.eval->f1;
    row["eval_em"] = rec.eval->em;
    row["eval_acc"] = rec.eval->acc;
  } else {
    row["eval_f1"] = nullptr;
    row["eval_em"] = nullptr;
    row["eval_acc"] = nullptr;
  }
  return row;
}

ordered_json checkpoint_to_json(const Checkpoint& ckpt) {
  ordered_json j;
  j["format"] = "mhgpo-checkpoint-v1";
  j["algorithm"] = algorithm_name(ckpt.algorithm);
  j["seed"] = ckpt.seed;
  j["dataset_seed"] = ckpt.dataset_seed;
  j["step"] = ckpt.step;
  j["num_roles"] = ckpt.params.num_roles;
  j["context_dim"] = ckpt.params.context_dim;
  j["max_positions"] = ckpt.params.max_positions;
  j["vocab_size"] = ckpt.params.vocab_size;
  j["feature_dim"] = ckpt.params.feature_dim();
  json env = ckpt.env;
  j["env"] = ordered_json::parse(env.dump());
  j["allowed"] = ckpt.params.allowed;
  j["weights"] = ckpt.params.weights;
  if (ckpt.critic) {
    j["critic"] = {{"gamma", ckpt.critic->gamma}, {"lambda", ckpt.critic->lambda}, {"weights", ckpt.critic->weights}};
  }
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != "mhgpo-checkpoint-v1") throw std::invalid_argument("checkpoint: unknown format");
  Checkpoint c;
  c.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.dataset_seed = j.at("dataset_seed").get<std::uint64_t>();
  c.step = j.at("step").get<std::size_t>();
  c.env = j.at("env").get<EnvConfig>();
  c.params.num_roles = j.at("num_roles").get<std::size_t>();
  c.params.context_dim = j.at("context_dim").get<std::size_t>();
  c.params.max_positions = j.at("max_positions").get<std::size_t>();
  c.params.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.params.weights = j.at("weights").get<std::vector<double>>();
  if (j.contains("allowed")) c.params.allowed = j.at("allowed").get<std::vector<std::vector<bool>>>();
  for (const auto& mask : c.params.allowed) {
    if (!mask.empty() && mask.size() != c.params.vocab_size) throw std::invalid_argument("checkpoint: alphabet size");
  }
  if (j.at("feature_dim").get<std::size_t>() != c.params.feature_dim()) {
    throw std::invalid_argument("checkpoint: feature_dim inconsistent with dims");
  }
  if (c.params.weights.size() != c.params.num_roles * c.params.feature_dim() * c.params.vocab_size) {
    throw std::invalid_argument("checkpoint: weight count does not match dims");
  }
  for (double w : c.params.weights) {
    if (!std::isfinite(w)) throw std::invalid_argument("checkpoint: non-finite weight");
  }
  if (j.contains("critic")) {
    const json& cj = j.at("critic");
    CriticParams critic = CriticParams::zeros_like(c.params, cj.at("gamma").get<double>(), cj.at("lambda").get<double>());
    critic.weights = cj.at("weights").get<std::vector<double>>();
    if (critic.weights.size() != critic.num_roles * critic.feature_dim()) {
      throw std::invalid_argument("checkpoint: critic weight count does not match dims");
    }
    c.critic = std::move(critic);
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_text(path, checkpoint_to_json(ckpt).dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json_file(path, "checkpoint")); }

RunSeries load_run_series(const std::string& dir) {
  RunSeries run;
  run.label = dir;
  std::ifstream cfg_in(dir + "/run.json");
  if (cfg_in) {
    const json cfg = json::parse(cfg_in);
    const std::string algo = cfg.value("algorithm", "?");
    run.label = algo == "mappo" ? std::string("mappo")
                                : algo + "-" + cfg.at("train").value("strategy", std::string("?"));
    run.label += " s" + std::to_string(cfg.value("seed", std::uint64_t{0}));
  }
  std::ifstream in(dir + "/metrics.jsonl");
  if (!in) throw std::runtime_error("cannot read metrics in '" + dir + "'");
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) run.rows.push_back(json::parse(line));
  }
  return run;
}

std::optional<std::size_t> steps_to_threshold(const RunSeries& run, const std::string& column, double threshold) {
  for (const auto& row : run.rows) {
    if (!row.contains(column) || row.at(column).is_null()) continue;
    if (row.at(column).get<double>() >= threshold) return row.at("step").get<std::size_t>();
  }
  return std::nullopt;
}

std::string compare_table(std::span<const RunSeries> runs, const std::string& threshold_column, double threshold) {
  if (runs.size() < 2) throw std::invalid_argument("compare: need at least two runs");
  std::vector<std::map<std::size_t, const json*>> by_step(runs.size());
  std::set<std::size_t> steps;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (const auto& row : runs[r].rows) {
      const auto step = row.at("step").get<std::size_t>();
      by_step[r][step] = &row;
      steps.insert(step);
    }
  }

  auto cell = [](const json* row, const char* col) -> std::string {
    if (row == nullptr || !row->contains(col) || row->at(col).is_null()) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", row->at(col).get<double>());
    return buf;
  };
  std::size_t width = 10;
  for (const auto& run : runs) width = std::max(width, run.label.size() + 2);

  std::ostringstream out;
  auto pad = [&](const std::string& s, std::size_t w) {
    out << s;
    for (std::size_t i = s.size(); i < w; ++i) out << ' ';
  };
  pad("step", 6);
  for (const auto& run : runs) {
    pad(run.label + ":R", width + 2);
    pad(run.label + ":F1", width + 3);
  }
  out << '\n';
  for (std::size_t step : steps) {
    pad(std::to_string(step), 6);
    for (std::size_t r = 0; r < runs.size(); ++r) {
      const auto it = by_step[r].find(step);
      const json* row = it == by_step[r].end() ? nullptr : it->second;
      pad(cell(row, "mean_total_reward"), width + 2);
      pad(cell(row, "eval_f1"), width + 3);
    }
    out << '\n';
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", threshold);
  out << "\nsteps to " << threshold_column << " >= " << buf << '\n';
  for (const auto& run : runs) {
    const auto hit = steps_to_threshold(run, threshold_column, threshold);
    pad(run.label, width + 2);
    out << (hit ? std::to_string(*hit) : std::string("not reached")) << '\n';
  }
  return out.str();
}

}  // namespace mhgpo

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mhgpo/env_searchsim.hpp"
#include "mhgpo/metrics.hpp"
#include "mhgpo/run_io.hpp"
#include "mhgpo/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

int cmd_train(const std::string& config_path, const std::optional<std::uint64_t>& seed,
              const std::optional<std::string>& out_flag) {
  mhgpo::RunConfig cfg = mhgpo::load_run_config(config_path);
  if (seed) cfg.train.seed = *seed;
  if (out_flag) {
    cfg.output_dir = *out_flag;
  } else if (const char* env_out = std::getenv("MHGPO_OUT_DIR"); env_out != nullptr && *env_out != '\0') {
    cfg.output_dir = env_out;
  }
  fs::create_directories(cfg.output_dir);
  const fs::path dir = cfg.output_dir;

  const mhgpo::SearchEnv env(mhgpo::generate_dataset(cfg.env, cfg.data_seed()));
  mhgpo::save_dataset(env.dataset(), (dir / "dataset.json").string());
  {
    std::ofstream run_out(dir / "run.json", std::ios::binary);
    run_out << mhgpo::run_config_to_json(cfg).dump(2) << '\n';
  }

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
  std::ofstream timing(dir / "timing.jsonl", std::ios::binary);
  if (!metrics || !timing) throw std::runtime_error("cannot write metrics in '" + cfg.output_dir + "'");
  const auto start = std::chrono::steady_clock::now();
  const auto algorithm = cfg.train.algorithm;
  const auto& topo = env.topology();

  const auto result = mhgpo::train(cfg.train, env, [&](const mhgpo::StepRecord& rec) {
    metrics << mhgpo::metrics_row(rec, algorithm, topo).dump() << '\n';
    metrics.flush();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    timing << ordered_json{{"step", rec.step}, {"wall_time", secs}}.dump() << '\n';
    if (rec.eval) {
      std::cerr << "step " << rec.step << "  reward " << rec.stats.mean_total_reward << "  eval_f1 " << rec.eval->f1
                << '\n';
    }
  });

  mhgpo::Checkpoint ckpt{result.params, result.critic, cfg.env, cfg.train.seed, cfg.data_seed(), result.steps,
                         algorithm};
  mhgpo::save_checkpoint(ckpt, (dir / "checkpoint.json").string());

  ordered_json summary;
  summary["steps"] = result.steps;
  auto put = [&](const char* key, const std::optional<mhgpo::EvalSummary>& e) {
    if (!e) {
      summary[key] = nullptr;
      return;
    }
    summary[key] = {{"f1", e->f1}, {"em", e->em}, {"acc", e->acc}, {"questions", e->questions}};
  };
  put("initial_eval", result.initial_eval);
  put("final_eval", result.final_eval);
  std::ofstream(dir / "summary.json", std::ios::binary) << summary.dump(2) << '\n';
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_spec, const std::string& split) {
  const mhgpo::Checkpoint ckpt = mhgpo::load_checkpoint(ckpt_path);
  mhgpo::Dataset data;
  if (dataset_spec.empty()) {
    data = mhgpo::generate_dataset(ckpt.env, ckpt.dataset_seed);
  } else if (dataset_spec.rfind("seed:", 0) == 0) {
    data = mhgpo::generate_dataset(ckpt.env, std::stoull(dataset_spec.substr(5)));
  } else {
    data = mhgpo::load_dataset(dataset_spec);
  }
  const mhgpo::SearchEnv env(std::move(data));
  std::vector<mhgpo::QaItem> questions;
  if (split == "eval" || split == "all") questions.insert(questions.end(), env.dataset().eval.begin(), env.dataset().eval.end());
  if (split == "train" || split == "all") {
    questions.insert(questions.end(), env.dataset().train.begin(), env.dataset().train.end());
  }
  const auto s = mhgpo::evaluate_greedy(ckpt.params, env, questions);
  ordered_json out{{"f1", s.f1}, {"em", s.em}, {"acc", s.acc}, {"questions", s.questions}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& column, double threshold) {
  std::vector<mhgpo::RunSeries> runs;
  for (const auto& d : dirs) runs.push_back(mhgpo::load_run_series(d));
  std::cout << mhgpo::compare_table(runs, column, threshold);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mhgpo: critic-free multi-agent group policy optimization on a synthetic search chain"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a policy and write metrics + checkpoint");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  train->add_option("--config", config_path, "run configuration (JSON)")->required();
  train->add_option("--seed", seed, "override the run seed");
  train->add_option("--out", out_dir, "output directory (beats MHGPO_OUT_DIR and the config)");

  auto* eval = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  std::string ckpt_path;
  std::string dataset_spec;
  std::string split = "eval";
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval->add_option("--dataset", dataset_spec, "dataset file, or seed:<n> to regenerate with the checkpoint's env");
  eval->add_option("--split", split, "eval, train or all")->check(CLI::IsMember({"eval", "train", "all"}));

  auto* compare = app.add_subcommand("compare", "side-by-side summary of run directories");
  std::vector<std::string> dirs;
  std::string column = "eval_f1";
  double threshold = 0.5;
  compare->add_option("dirs", dirs, "run output directories")->required()->expected(2, -1);
  compare->add_option("--column", column, "metric for steps-to-threshold");
  compare->add_option("--threshold", threshold, "threshold for steps-to-threshold");

  auto* dump = app.add_subcommand("dump-dataset", "write a generated dataset as JSON");
  std::string dump_config;
  std::string dump_out;
  dump->add_option("--config", dump_config, "run configuration (JSON)")->required();
  dump->add_option("--out", dump_out, "dataset file")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config_path, seed, out_dir);
    if (*eval) return cmd_eval(ckpt_path, dataset_spec, split);
    if (*compare) return cmd_compare(dirs, column, threshold);
    if (*dump) {
      const auto cfg = mhgpo::load_run_config(dump_config);
      mhgpo::save_dataset(mhgpo::generate_dataset(cfg.env, cfg.data_seed()), dump_out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

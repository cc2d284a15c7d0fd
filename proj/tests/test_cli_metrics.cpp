#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mhgpo/metrics.hpp"
#include "mhgpo/run_io.hpp"
#include "mhgpo/training.hpp"
#include "test_support.hpp"

using namespace mhgpo;
using nlohmann::json;

TEST_CASE("intra-group similarity") {
  const std::vector<std::vector<Token>> g{{1, 2}, {1, 2}, {3, 4}};
  CHECK(intra_group_similarity(g) == doctest::Approx(1.0 / 3.0));
  const std::vector<std::vector<Token>> p{{3, 4}, {1, 2}, {2, 1}};
  CHECK(intra_group_similarity(p) == doctest::Approx(1.0 / 3.0));
  const std::vector<std::vector<Token>> same{{5}, {5}};
  CHECK(intra_group_similarity(same) == 1.0);
  const std::vector<std::vector<Token>> empties{{}, {}};
  CHECK(intra_group_similarity(empties) == 1.0);
  CHECK_THROWS(intra_group_similarity(std::vector<std::vector<Token>>{{1}}));
  CHECK_THROWS(intra_group_similarity(std::vector<std::vector<Token>>{}));
}

TEST_CASE("evaluation errors") {
  const SearchEnv env(generate_dataset(testing::small_env_config(), 1));
  const auto p = initial_policy(env);
  CHECK_THROWS_AS(evaluate_greedy(p, env, std::vector<QaItem>{}), std::invalid_argument);
  EnvConfig other = testing::small_env_config();
  other.vocab_size += 3;
  const SearchEnv env2(generate_dataset(other, 1));
  CHECK_THROWS_AS(evaluate_greedy(p, env2, env2.dataset().eval), std::invalid_argument);
  const auto s = evaluate_greedy(p, env, env.dataset().eval);
  CHECK(s.questions == env.dataset().eval.size());
}

TEST_CASE("run config parsing") {
  const auto d = run_config_from_json(json::object());
  CHECK(d.train.algorithm == Algorithm::kMhgpo);
  CHECK(d.data_seed() == d.train.seed);

  const json j = json::parse(R"({
    "algorithm": "mappo", "seed": 7, "dataset_seed": 3, "output_dir": "x",
    "train": {"strategy": "RR", "group_size": 5, "rr_probs": [0.5, 0.25, 0.25], "kl_mode": "exact",
              "regroup": "pooled", "batch_size": 8},
    "mappo": {"gamma": 0.9, "lambda": 0.8},
    "env": {"vocab_size": 20}
  })");
  const auto c = run_config_from_json(j);
  CHECK(c.train.algorithm == Algorithm::kMappo);
  CHECK(c.train.seed == 7);
  CHECK(c.data_seed() == 3);
  CHECK(c.output_dir == "x");
  CHECK(c.train.plan.strategy == Strategy::kRoundRobin);
  CHECK(c.train.plan.group_size == 5);
  CHECK(c.train.plan.regroup == RegroupMode::kPooled);
  CHECK(c.train.kl_mode == KlMode::kExact);
  CHECK(c.train.batch_size == 8);
  CHECK(c.train.mappo.gamma == 0.9);
  CHECK(c.env.vocab_size == 20);

  // round trip
  const auto back = run_config_from_json(json::parse(run_config_to_json(c).dump()));
  CHECK(run_config_to_json(back).dump() == run_config_to_json(c).dump());

  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"bogus": 1})")), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"lr_typo": 1}})")), std::invalid_argument);
  CHECK_THROWS(run_config_from_json(json::parse(R"({"algorithm": "ppo"})")));
  CHECK_THROWS(run_config_from_json(json::parse(R"({"train": {"strategy": "XX"}})")));
}

TEST_CASE("metrics schema depends on algorithm only") {
  const auto topo = search_topology();
  const auto cols = metrics_columns(Algorithm::kMhgpo, topo);
  const auto mcols = metrics_columns(Algorithm::kMappo, topo);
  CHECK(std::find(cols.begin(), cols.end(), "critic_loss") == cols.end());
  CHECK(std::find(mcols.begin(), mcols.end(), "critic_loss") != mcols.end());
  for (const char* c : {"step", "mean_total_reward", "eval_f1", "similarity_reranker", "penalty_answerer"}) {
    CHECK(std::find(cols.begin(), cols.end(), c) != cols.end());
  }

  StepRecord bare;
  bare.step = 1;
  StepRecord full;
  full.step = 2;
  full.stats.similarity[2] = 0.5;
  full.eval = EvalSummary{0.5, 0.25, 0.75, 10};
  for (auto algo : {Algorithm::kMhgpo, Algorithm::kMappo}) {
    const auto want = metrics_columns(algo, topo);
    for (const auto* rec : {&bare, &full}) {
      const auto row = metrics_row(*rec, algo, topo);
      std::vector<std::string> keys;
      for (auto it = row.begin(); it != row.end(); ++it) keys.push_back(it.key());
      CHECK(keys == want);
    }
  }
  const auto row = metrics_row(bare, Algorithm::kMhgpo, topo);
  CHECK(row.at("eval_f1").is_null());
  CHECK(metrics_row(full, Algorithm::kMhgpo, topo).at("eval_f1") == 0.5);
}

TEST_CASE("checkpoint round trip preserves greedy evaluation") {
  const SearchEnv env(generate_dataset(testing::small_env_config(), 2));
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_steps = 3;
  const auto res = train(cfg, env);
  Checkpoint ck{res.params, std::nullopt, env.cfg(), 0, 2, res.steps, Algorithm::kMhgpo};
  const auto dir = std::filesystem::temp_directory_path() / "mhgpo_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "ck.json").string();
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path);
  CHECK(back.params.weights == res.params.weights);
  CHECK(back.params.allowed == res.params.allowed);
  CHECK(back.step == 3);
  const SearchEnv env2(generate_dataset(back.env, back.dataset_seed));
  const auto a = evaluate_greedy(res.params, env, env.dataset().eval);
  const auto b = evaluate_greedy(back.params, env2, env2.dataset().eval);
  CHECK(a.f1 == b.f1);
  CHECK(a.em == b.em);

  auto j = checkpoint_to_json(ck);
  j["weights"].erase(j["weights"].begin());
  CHECK_THROWS(checkpoint_from_json(j));
  auto k = checkpoint_to_json(ck);
  k["format"] = "other";
  CHECK_THROWS(checkpoint_from_json(k));

  // MAPPO checkpoints carry the critic
  Checkpoint mk = ck;
  mk.algorithm = Algorithm::kMappo;
  mk.critic = CriticParams::zeros_like(res.params, 0.9, 0.8);
  mk.critic->weights[1] = 0.125;
  const auto mb = checkpoint_from_json(json::parse(checkpoint_to_json(mk).dump()));
  REQUIRE(mb.critic.has_value());
  CHECK(mb.critic->weights == mk.critic->weights);
  CHECK(mb.critic->gamma == 0.9);
  std::filesystem::remove_all(dir);
}

TEST_CASE("compare table") {
  RunSeries a{"mhgpo-FoF s1", {}};
  RunSeries b{"mappo s1", {}};
  for (std::size_t s = 1; s <= 4; ++s) {
    a.rows.push_back({{"step", s}, {"mean_total_reward", 0.1 * s}, {"eval_f1", s % 2 == 0 ? json(0.2 * s) : json()}});
  }
  for (std::size_t s = 1; s <= 2; ++s) b.rows.push_back({{"step", s}, {"mean_total_reward", 0.0}, {"eval_f1", 0.1}});
  CHECK(steps_to_threshold(a, "eval_f1", 0.5) == 4);
  CHECK(steps_to_threshold(a, "eval_f1", 0.4) == 2);
  CHECK_FALSE(steps_to_threshold(b, "eval_f1", 0.5).has_value());
  const std::vector<RunSeries> runs{a, b};
  const auto t = compare_table(runs, "eval_f1", 0.5);
  CHECK(t.find("not reached") != std::string::npos);
  CHECK(t.find("mhgpo-FoF s1:F1") != std::string::npos);
  // step 3 is missing from b and has no eval in a
  std::istringstream in(t);
  std::string line;
  int dashed = 0;
  while (std::getline(in, line)) {
    if (line.rfind("3 ", 0) == 0 || line.rfind("4 ", 0) == 0) dashed += std::count(line.begin(), line.end(), '-') >= 2;
  }
  CHECK(dashed == 2);
  CHECK_THROWS(compare_table(std::vector<RunSeries>{a}, "eval_f1", 0.5));
}

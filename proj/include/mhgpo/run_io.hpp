#ifndef MHGPO_RUN_IO_HPP_
#define MHGPO_RUN_IO_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mhgpo/env_searchsim.hpp"
#include "mhgpo/mappo.hpp"
#include "mhgpo/policy.hpp"
#include "mhgpo/trainer.hpp"
#include "mhgpo/training.hpp"

namespace mhgpo {

struct RunConfig {
  TrainConfig train;
  EnvConfig env;
  std::string output_dir = "runs/default";
  std::optional<std::uint64_t> dataset_seed;  // defaults to train.seed

  std::uint64_t data_seed() const { return dataset_seed.value_or(train.seed); }
};

// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

// Column set depends on (algorithm, topology) only.
std::vector<std::string> metrics_columns(Algorithm algorithm, const MasTopology& topology);
nlohmann::ordered_json metrics_row(const StepRecord& rec, Algorithm algorithm, const MasTopology& topology);

struct Checkpoint {
  PolicyParams params;
  std::optional<CriticParams> critic;
  EnvConfig env;
  std::uint64_t seed = 0;
  std::uint64_t dataset_seed = 0;
  std::size_t step = 0;
  Algorithm algorithm = Algorithm::kMhgpo;
};

nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// One completed run as read back from its output directory.
struct RunSeries {
  std::string label;
  std::vector<nlohmann::json> rows;
};

RunSeries load_run_series(const std::string& dir);

// First step whose `column` value is >= threshold; null values are skipped.
std::optional<std::size_t> steps_to_threshold(const RunSeries& run, const std::string& column, double threshold);

// Aligned per-step reward and eval F1 columns, then steps-to-threshold per run.
// Steps a run lacks print as "-".
std::string compare_table(std::span<const RunSeries> runs, const std::string& threshold_column, double threshold);

}  // namespace mhgpo

#endif  // MHGPO_RUN_IO_HPP_

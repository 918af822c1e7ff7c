#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "bb/eval.hpp"
#include "bb/models.hpp"
#include "bb/raster.hpp"
#include "bb/training.hpp"

// Pipeline steps shared by the command-line tool and the acceptance tests.
// Every artifact written here carries the configuration and seed that
// produced it.

namespace bb::experiment {

struct DataConfig {
  sim::WorldConfig world;
  int n_train = 6000;
  int n_valid = 1200;
  int n_test = 1200;
  int frames = 40;
  int resolution = 60;
  bool legacy_upsample = false;

  int count(raster::Split split) const;
  void validate() const;
  nlohmann::json to_json() const;
  static DataConfig from_json(const nlohmann::json& j);
};

struct EvalConfig {
  int context = 10;
  int horizon = 20;
  eval::DetectionConfig detection;
  eval::Matching matching = eval::Matching::greedy;

  void validate() const;
  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
  std::string profile = "paper";
  std::uint64_t seed = 0;
  DataConfig data;
  models::ModelSpec model;
  training::TrainConfig train;
  EvalConfig eval;

  void validate() const;
  nlohmann::json to_json() const;
  /// Keys missing from `j` keep the values of `base`.
  static ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base);
};

/// Full-size defaults: 60x60 frames, 6000/1200/1200 sequences of 40 frames,
/// best architecture settings.
ExperimentConfig paper_profile(models::Architecture arch = models::Architecture::convlstm);
/// Desk-scale: 30x30 frames, 200/40/40 sequences, 2-layer models.
ExperimentConfig smoke_profile(models::Architecture arch = models::Architecture::convlstm);
/// "paper" or "smoke"; throws ConfigError otherwise.
ExperimentConfig profile(const std::string& name,
                         models::Architecture arch = models::Architecture::convlstm);

/// Spec of `arch` at the profile's scale, keeping its resolution and horizon.
models::ModelSpec spec_for(const ExperimentConfig& config, models::Architecture arch);

/// Each split gets its own simulation seed: master, +1e6, +2e6.
std::uint64_t split_seed(std::uint64_t master, raster::Split split);

raster::Dataset generate_split(const DataConfig& data, std::uint64_t master_seed,
                               raster::Split split);

/// File name of a split inside a data directory: "<split>.bbv".
std::filesystem::path split_path(const std::filesystem::path& dir, raster::Split split);
/// Writes the three splits; returns their paths in train, valid, test order.
std::vector<std::filesystem::path> generate_all(const DataConfig& data, std::uint64_t master_seed,
                                                const std::filesystem::path& dir);

/// A data argument is either a dataset file or a directory holding splits.
raster::Dataset load_split(const std::filesystem::path& path, raster::Split split);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

struct TrainOutcome {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  long steps = 0;
  double final_loss = 0.0;
  bool diverged = false;
  std::string divergence;
};

/// Trains, then writes the checkpoint (the last good state on divergence)
/// and the loss log "<checkpoint>.loss.csv".
TrainOutcome train_and_save(const models::ModelSpec& spec, const training::TrainConfig& config,
                            const raster::Dataset& data, const std::filesystem::path& checkpoint,
                            const nlohmann::json& provenance,
                            const training::EpochCallback& on_epoch = {});

/// Evaluates a checkpoint, writes the CSV report and a JSON twin
/// "<csv>.json" with the configuration, checkpoint metadata and summary.
eval::EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint,
                                     const raster::Dataset& data, const EvalConfig& config,
                                     const std::filesystem::path& csv);

/// One SVG per metric ("mse.svg", "centroid.svg") for a set of CSV reports.
std::vector<std::filesystem::path> write_report(const std::vector<std::filesystem::path>& csvs,
                                                const std::filesystem::path& out_dir);

struct PipelineResult {
  TrainOutcome training;
  eval::EvalReport report;  // empty when training diverged
  std::filesystem::path csv;
};

/// generate -> train -> evaluate -> report under `dir`: data/<split>.bbv,
/// <arch>.ckpt.json, report.csv (+ .json), mse.svg, centroid.svg and
/// config.json. Training is seeded from `config.seed`. Stops after
/// training when it diverges.
PipelineResult run_pipeline(const ExperimentConfig& config, const std::filesystem::path& dir,
                            const training::EpochCallback& on_epoch = {});

/// Trains `n` teacher-forced and `n` curriculum seq2seq models differing only
/// in seed, evaluates them at the configured horizon and writes per-model
/// reports, a paired summary "paired.csv" and charts under `out_dir`.
struct CurriculumComparison {
  struct Run {
    training::Mode mode;
    std::uint64_t seed;
    std::filesystem::path checkpoint;
    eval::EvalReport report;
    bool diverged;
  };
  std::vector<Run> runs;
  std::filesystem::path summary;
};
CurriculumComparison compare_curriculum(const ExperimentConfig& config, int n,
                                        const raster::Dataset& train_data,
                                        const raster::Dataset& test_data,
                                        const std::filesystem::path& out_dir);

}  // namespace bb::experiment

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "bb/models.hpp"
#include "bb/optim.hpp"
#include "bb/raster.hpp"

namespace bb::training {

enum class Mode { forced, blind, curriculum };
/// Which prediction steps become self-fed as the curriculum advances.
enum class CurriculumStrategy { tail, head };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);
std::string to_string(CurriculumStrategy strategy);
CurriculumStrategy strategy_from_string(const std::string& name);

struct TrainConfig {
  Mode mode = Mode::forced;
  double lr = 0.001;
  int minibatch = 16;
  int epochs = 100;
  int context = 10;
  int horizon = 20;
  std::uint64_t seed = 0;

  CurriculumStrategy strategy = CurriculumStrategy::tail;
  optim::Kind optimizer = optim::Kind::adam;
  /// Global gradient-norm cap; <= 0 disables clipping.
  double clip_norm = 5.0;
  /// Encoder-decoder models: decoders always read their own outputs,
  /// whatever the regimen.
  bool decoder_self_feed = false;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Number of self-fed prediction steps in `epoch`: one more every 10 epochs,
/// capped at the horizon.
int curriculum_schedule(int epoch, int horizon);

/// Input schedule for a regimen. `n_self_fed` is only read in curriculum mode.
models::FeedPlan feed_plan(const TrainConfig& config, const models::ModelSpec& spec,
                           int n_self_fed);
/// Tail or head placement of `n_self_fed` self-fed steps among `steps`.
std::vector<bool> curriculum_mask(int steps, int n_self_fed, CurriculumStrategy strategy);

/// Loads frames 0 .. t+k-1 of a sequence as normalized constants on `tape`.
/// Throws ConfigError if the sequence is shorter than t + k.
template <typename T>
std::vector<ag::Var<T>> sequence_frames(ag::Tape<T>& tape, const raster::VideoSequence& seq,
                                        int context, int horizon);

/// (1/k) sum_i MSE(pred_i, x_{t+i}) on normalized frames; for the
/// multi-decoder the mean of that and the reconstruction loss.
template <typename T>
ag::Var<T> rollout_loss(const models::BoundModel<T>& model, std::span<const ag::Var<T>> frames,
                        int context, int horizon, const models::FeedPlan& plan);

template <typename T>
ag::Var<T> teacher_forced_loss(const models::BoundModel<T>& model,
                               std::span<const ag::Var<T>> frames, int context, int horizon);
template <typename T>
ag::Var<T> blind_loss(const models::BoundModel<T>& model, std::span<const ag::Var<T>> frames,
                      int context, int horizon);
template <typename T>
ag::Var<T> curriculum_loss(const models::BoundModel<T>& model, std::span<const ag::Var<T>> frames,
                           int context, int horizon, int n_self_fed,
                           CurriculumStrategy strategy = CurriculumStrategy::tail);

struct LossRecord {
  int epoch = 0;
  long step = 0;
  Mode mode = Mode::forced;
  int n_self_fed = 0;
  double loss = 0.0;
};

template <typename T>
struct TrainResult {
  models::Model<T> model;
  std::vector<LossRecord> log;
  long steps = 0;
  bool diverged = false;
  std::string divergence;  // message when diverged; `model` is the last good state
};

/// Called after every epoch with the epoch index and its mean loss.
using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Minibatch training under the configured regimen. Parameters are
/// initialized and minibatches shuffled from `config.seed`. Items of a
/// minibatch run on parallel workers, each with its own parameter replica;
/// gradients are summed in item order, so the log is independent of the
/// worker count.
template <typename T>
TrainResult<T> train(const models::ModelSpec& spec, const raster::Dataset& dataset,
                     const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Same, continuing from existing parameters.
template <typename T>
TrainResult<T> train(models::Model<T> model, const raster::Dataset& dataset,
                     const TrainConfig& config, const EpochCallback& on_epoch = {});

/// CSV with header epoch,step,mode,n_self_fed,loss.
void write_loss_log(const std::vector<LossRecord>& log, const std::filesystem::path& path);

// --- one-at-a-time hyperparameter search -------------------------------------

/// Recognized axes: lr, layers, kernel, channels, hidden_units, epochs, minibatch.
const std::vector<std::string>& grid_axes();

struct GridEntry {
  std::string value;
  double score = 0.0;  // mean one-step scaled MSE on the validation split
  bool diverged = false;
  models::ModelSpec spec;
  TrainConfig config;
  std::vector<LossRecord> log;
};

/// Applies one axis value; on a ConfigError both arguments are left unchanged.
void apply_axis(const std::string& axis, const std::string& value, models::ModelSpec& spec,
                TrainConfig& config);

/// Trains one model per value, scores each on `valid`, returns entries
/// sorted by ascending score (diverged runs last).
std::vector<GridEntry> grid_search(const models::ModelSpec& base_spec,
                                   const TrainConfig& base_config, const std::string& axis,
                                   const std::vector<std::string>& values,
                                   const raster::Dataset& train_data,
                                   const raster::Dataset& valid_data);

}  // namespace bb::training

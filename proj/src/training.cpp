#include "bb/training.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "bb/error.hpp"
#include "bb/eval.hpp"

namespace bb::training {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::forced: return "forced";
    case Mode::blind: return "blind";
    case Mode::curriculum: return "curriculum";
  }
  return "forced";
}

Mode mode_from_string(const std::string& name) {
  if (name == "forced") return Mode::forced;
  if (name == "blind") return Mode::blind;
  if (name == "curriculum") return Mode::curriculum;
  throw ConfigError("unknown training mode '" + name + "' (expected forced, blind or curriculum)");
}

std::string to_string(CurriculumStrategy strategy) {
  return strategy == CurriculumStrategy::tail ? "tail" : "head";
}

CurriculumStrategy strategy_from_string(const std::string& name) {
  if (name == "tail") return CurriculumStrategy::tail;
  if (name == "head") return CurriculumStrategy::head;
  throw ConfigError("unknown curriculum strategy '" + name + "' (expected tail or head)");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (minibatch < 1) throw ConfigError("minibatch must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (context < 1) throw ConfigError("context must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"mode", to_string(mode)},
          {"lr", lr},
          {"minibatch", minibatch},
          {"epochs", epochs},
          {"context", context},
          {"horizon", horizon},
          {"seed", seed},
          {"curriculum_strategy", to_string(strategy)},
          {"optimizer", optim::to_string(optimizer)},
          {"clip_norm", clip_norm},
          {"decoder_self_feed", decoder_self_feed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("mode")) c.mode = mode_from_string(j["mode"].get<std::string>());
    c.lr = j.value("lr", c.lr);
    c.minibatch = j.value("minibatch", c.minibatch);
    c.epochs = j.value("epochs", c.epochs);
    c.context = j.value("context", c.context);
    c.horizon = j.value("horizon", c.horizon);
    c.seed = j.value("seed", c.seed);
    if (j.contains("curriculum_strategy")) {
      c.strategy = strategy_from_string(j["curriculum_strategy"].get<std::string>());
    }
    if (j.contains("optimizer")) c.optimizer = optim::kind_from_string(j["optimizer"].get<std::string>());
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.decoder_self_feed = j.value("decoder_self_feed", c.decoder_self_feed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

int curriculum_schedule(int epoch, int horizon) {
  if (epoch < 0) throw ConfigError("curriculum_schedule: epoch must be >= 0");
  return std::min(horizon, epoch / 10);
}

std::vector<bool> curriculum_mask(int steps, int n_self_fed, CurriculumStrategy strategy) {
  if (n_self_fed < 0) throw ConfigError("n_self_fed must be >= 0");
  std::vector<bool> mask(steps, false);
  const int n = std::min(n_self_fed, steps);
  for (int j = 0; j < n; ++j) {
    // Index 0 is the first prediction step, which always reads the context.
    const int idx = strategy == CurriculumStrategy::tail ? steps - 1 - j : 1 + j;
    if (idx >= 1 && idx < steps) mask[idx] = true;
  }
  return mask;
}

models::FeedPlan feed_plan(const TrainConfig& config, const models::ModelSpec& spec,
                           int n_self_fed) {
  const int t = config.context, k = config.horizon;
  models::FeedPlan plan;
  switch (config.mode) {
    case Mode::forced: plan = models::FeedPlan::forced(k, t); break;
    case Mode::blind: plan = models::FeedPlan::blind(k, t); break;
    case Mode::curriculum: {
      if (n_self_fed < 0 || n_self_fed > k) throw ConfigError("n_self_fed must lie in [0, horizon]");
      plan.future = curriculum_mask(k, n_self_fed, config.strategy);
      // The reconstruction decoder self-feeds the same fraction of its steps.
      plan.reconstruction = curriculum_mask(t, n_self_fed * t / k, config.strategy);
      break;
    }
  }
  if (spec.has_decoder() && config.decoder_self_feed) {
    plan.future.assign(k, true);
    plan.reconstruction.assign(t, true);
  }
  return plan;
}

template <typename T>
std::vector<ag::Var<T>> sequence_frames(ag::Tape<T>& tape, const raster::VideoSequence& seq,
                                        int context, int horizon) {
  if (seq.n_frames < context + horizon) {
    throw ConfigError("sequence has " + std::to_string(seq.n_frames) + " frames, need context + horizon = " +
                      std::to_string(context + horizon));
  }
  std::vector<ag::Var<T>> frames;
  frames.reserve(context + horizon);
  for (int i = 0; i < context + horizon; ++i) {
    frames.push_back(tape.constant(ag::Tensor<T>({1, seq.height, seq.width}, seq.normalized<T>(i))));
  }
  return frames;
}

namespace {

template <typename T>
ag::Var<T> mean_mse(std::span<const ag::Var<T>> preds, std::span<const ag::Var<T>> targets) {
  ag::Var<T> total = ag::mse(preds[0], targets[0]);
  for (std::size_t i = 1; i < preds.size(); ++i) total = ag::add(total, ag::mse(preds[i], targets[i]));
  return ag::scale(total, T{1} / static_cast<T>(preds.size()));
}

template <typename T>
void check_frames(std::span<const ag::Var<T>> frames, int context, int horizon) {
  if (frames.size() < static_cast<std::size_t>(context + horizon)) {
    throw ConfigError("sequence too short: " + std::to_string(frames.size()) +
                      " frames for context + horizon = " + std::to_string(context + horizon));
  }
}

}  // namespace

template <typename T>
ag::Var<T> rollout_loss(const models::BoundModel<T>& model, std::span<const ag::Var<T>> frames,
                        int context, int horizon, const models::FeedPlan& plan) {
  check_frames(frames, context, horizon);
  const auto rollout = models::unroll<T>(model, frames.subspan(0, context + horizon), context, horizon, plan);
  ag::Var<T> loss = mean_mse<T>(rollout.future, frames.subspan(context, horizon));
  if (!rollout.reconstruction.empty()) {
    std::vector<ag::Var<T>> reversed(frames.begin(), frames.begin() + context);
    std::reverse(reversed.begin(), reversed.end());
    ag::Var<T> rec = mean_mse<T>(rollout.reconstruction, reversed);
    loss = ag::scale(ag::add(loss, rec), T{0.5});
  }
  return loss;
}

template <typename T>
ag::Var<T> teacher_forced_loss(const models::BoundModel<T>& model,
                               std::span<const ag::Var<T>> frames, int context, int horizon) {
  return rollout_loss(model, frames, context, horizon, models::FeedPlan::forced(horizon, context));
}

template <typename T>
ag::Var<T> blind_loss(const models::BoundModel<T>& model, std::span<const ag::Var<T>> frames,
                      int context, int horizon) {
  return rollout_loss(model, frames, context, horizon, models::FeedPlan::blind(horizon, context));
}

template <typename T>
ag::Var<T> curriculum_loss(const models::BoundModel<T>& model, std::span<const ag::Var<T>> frames,
                           int context, int horizon, int n_self_fed,
                           CurriculumStrategy strategy) {
  TrainConfig config;
  config.mode = Mode::curriculum;
  config.context = context;
  config.horizon = horizon;
  config.strategy = strategy;
  return rollout_loss(model, frames, context, horizon, feed_plan(config, *model.spec, n_self_fed));
}

template <typename T>
TrainResult<T> train(const models::ModelSpec& spec, const raster::Dataset& dataset,
                     const TrainConfig& config, const EpochCallback& on_epoch) {
  models::Model<T> model(spec);
  Rng init_rng(config.seed);
  model.init_params(init_rng);
  return train<T>(std::move(model), dataset, config, on_epoch);
}

template <typename T>
TrainResult<T> train(models::Model<T> model, const raster::Dataset& dataset,
                     const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const models::ModelSpec spec = model.spec();
  if (dataset.sequences.empty()) throw ConfigError("train: dataset is empty");
  if (dataset.height() != spec.height || dataset.width() != spec.width) {
    throw ConfigError("train: dataset frames are " + std::to_string(dataset.height()) + "x" +
                      std::to_string(dataset.width()) + " but the model expects " +
                      std::to_string(spec.height) + "x" + std::to_string(spec.width));
  }
  if (dataset.frames_per_seq() < config.context + config.horizon) {
    throw ConfigError("train: sequences have " + std::to_string(dataset.frames_per_seq()) +
                      " frames, need context + horizon = " +
                      std::to_string(config.context + config.horizon));
  }

  TrainResult<T> result{std::move(model), {}, 0, false, {}};
  models::Model<T>& master = result.model;
  master.params().zero_grad();
  optim::Optimizer<T> optimizer(config.optimizer);
  Rng shuffle_rng(config.seed ^ 0x5DEECE66DULL);

  const int n = static_cast<int>(dataset.sequences.size());
  const int workers = std::max(1, omp_get_max_threads());
  std::vector<models::Model<T>> replicas(workers, master);
  std::vector<int> order(n);
  std::vector<std::vector<T>> last_good(master.params().size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[i], order[uniform_index(shuffle_rng, static_cast<std::uint64_t>(i) + 1)]);
    }
    const int n_self_fed = config.mode == Mode::curriculum ? curriculum_schedule(epoch, config.horizon) : 0;
    const models::FeedPlan plan = feed_plan(config, spec, n_self_fed);
    double epoch_loss = 0.0;
    int epoch_steps = 0;

    for (int start = 0; start < n; start += config.minibatch) {
      const int batch = std::min(config.minibatch, n - start);
      master.params().zero_grad();
      double batch_loss = 0.0;
      std::vector<double> item_loss(workers);
      std::string failure;

      for (int chunk = 0; chunk < batch; chunk += workers) {
        const int items = std::min(workers, batch - chunk);
#pragma omp parallel for schedule(static, 1) num_threads(items)
        for (int w = 0; w < items; ++w) {
          try {
            auto& replica = replicas[w];
            for (std::size_t p = 0; p < master.params().size(); ++p) {
              replica.params().tensor(p).values = master.params().tensor(p).values;
            }
            replica.params().zero_grad();
            ag::Tape<T> tape;
            const auto bound = models::bind(tape, replica);
            const auto& seq = dataset.sequences[order[start + chunk + w]];
            const auto frames = sequence_frames<T>(tape, seq, config.context, config.horizon);
            ag::Var<T> loss = rollout_loss<T>(bound, frames, config.context, config.horizon, plan);
            tape.backward(loss);
            item_loss[w] = static_cast<double>(loss.item());
          } catch (const std::exception& e) {
#pragma omp critical
            failure = e.what();
          }
        }
        if (!failure.empty()) throw std::runtime_error(failure);
        for (int w = 0; w < items; ++w) {
          batch_loss += item_loss[w];
          for (std::size_t p = 0; p < master.params().size(); ++p) {
            auto& g = master.params().tensor(p).grad;
            const auto& rg = replicas[w].params().tensor(p).grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += rg[i];
          }
        }
      }

      batch_loss /= batch;
      if (!std::isfinite(batch_loss)) {
        result.diverged = true;
        result.divergence = "diverged: non-finite loss at optimizer step " + std::to_string(result.steps);
        return result;
      }
      master.params().scale_grad(T{1} / static_cast<T>(batch));
      if (config.clip_norm > 0.0) optim::clip_grad_norm(master.params(), config.clip_norm);
      for (std::size_t p = 0; p < master.params().size(); ++p) {
        last_good[p] = master.params().tensor(p).values;
      }
      try {
        optimizer.step(master.params(), config.lr);
      } catch (const DivergedError& e) {
        result.diverged = true;
        result.divergence = e.what();
        return result;
      }
      // An overflowing update is caught here rather than at the next forward pass.
      for (std::size_t p = 0; p < master.params().size(); ++p) {
        const auto& v = master.params().tensor(p).values;
        if (std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(static_cast<double>(x)); })) {
          continue;
        }
        for (std::size_t q = 0; q < master.params().size(); ++q) {
          master.params().tensor(q).values = last_good[q];
        }
        master.params().zero_grad();
        result.diverged = true;
        result.divergence = "diverged: non-finite parameter '" + master.params().name(p) +
                            "' after optimizer step " + std::to_string(result.steps + 1);
        return result;
      }
      result.log.push_back({epoch, result.steps, config.mode, n_self_fed, batch_loss});
      ++result.steps;
      epoch_loss += batch_loss;
      ++epoch_steps;
    }
    if (on_epoch) on_epoch(epoch, epoch_loss / epoch_steps);
  }
  master.params().zero_grad();
  return result;
}

void write_loss_log(const std::vector<LossRecord>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write loss log '" + path.string() + "'");
  out << "epoch,step,mode,n_self_fed,loss\n";
  char buf[64];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%.9g", r.loss);
    out << r.epoch << ',' << r.step << ',' << to_string(r.mode) << ',' << r.n_self_fed << ','
        << buf << '\n';
  }
}

// --- grid search -------------------------------------------------------------

const std::vector<std::string>& grid_axes() {
  static const std::vector<std::string> axes{"lr",           "layers", "kernel", "channels",
                                             "hidden_units", "epochs", "minibatch"};
  return axes;
}

namespace {

int parse_int(const std::string& axis, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("axis '" + axis + "' expects an integer, got '" + value + "'");
  }
}

void resize_layers(models::ModelSpec& spec, int n) {
  if (n < 1) throw ConfigError("layers must be >= 1");
  if (spec.convolutional()) {
    std::vector<int> kernels(spec.kernels.begin(), spec.kernels.end() - 1);
    std::vector<int> channels(spec.channels.begin(), spec.channels.end() - 1);
    const int fill_kernel = kernels.empty() ? spec.kernels.back() : kernels.back();
    const int fill_channels = channels.empty() ? 10 : channels.back();
    kernels.resize(n - 1, fill_kernel);
    channels.resize(n - 1, fill_channels);
    kernels.push_back(spec.kernels.back());
    channels.push_back(1);
    spec.kernels = std::move(kernels);
    spec.channels = std::move(channels);
  } else {
    std::vector<int> units(spec.hidden_units.begin(), spec.hidden_units.end() - 1);
    units.resize(n - 1, 1024);
    units.push_back(spec.frame_size());
    spec.hidden_units = std::move(units);
  }
}

}  // namespace

void apply_axis(const std::string& axis, const std::string& value, models::ModelSpec& spec_out,
                TrainConfig& config_out) {
  models::ModelSpec spec = spec_out;
  TrainConfig config = config_out;
  if (axis == "lr") {
    try {
      config.lr = std::stod(value);
    } catch (const std::exception&) {
      throw ConfigError("axis 'lr' expects a number, got '" + value + "'");
    }
  } else if (axis == "layers") {
    resize_layers(spec, parse_int(axis, value));
  } else if (axis == "kernel") {
    std::fill(spec.kernels.begin(), spec.kernels.end(), parse_int(axis, value));
  } else if (axis == "channels") {
    std::fill(spec.channels.begin(), spec.channels.end() - 1, parse_int(axis, value));
  } else if (axis == "hidden_units") {
    std::fill(spec.hidden_units.begin(), spec.hidden_units.end() - 1, parse_int(axis, value));
  } else if (axis == "epochs") {
    config.epochs = parse_int(axis, value);
  } else if (axis == "minibatch") {
    config.minibatch = parse_int(axis, value);
  } else {
    std::string known;
    for (const auto& a : grid_axes()) known += (known.empty() ? "" : ", ") + a;
    throw ConfigError("unknown grid-search axis '" + axis + "' (known: " + known + ")");
  }
  spec.validate();
  config.validate();
  spec_out = std::move(spec);
  config_out = std::move(config);
}

std::vector<GridEntry> grid_search(const models::ModelSpec& base_spec,
                                   const TrainConfig& base_config, const std::string& axis,
                                   const std::vector<std::string>& values,
                                   const raster::Dataset& train_data,
                                   const raster::Dataset& valid_data) {
  if (values.empty()) throw ConfigError("grid search needs at least one value");
  // Validate every value before spending time on training.
  for (const auto& v : values) {
    models::ModelSpec s = base_spec;
    TrainConfig c = base_config;
    apply_axis(axis, v, s, c);
  }

  std::vector<GridEntry> entries;
  for (const auto& v : values) {
    GridEntry entry;
    entry.value = v;
    entry.spec = base_spec;
    entry.config = base_config;
    apply_axis(axis, v, entry.spec, entry.config);
    auto result = train<float>(entry.spec, train_data, entry.config);
    entry.log = std::move(result.log);
    entry.diverged = result.diverged;
    if (result.diverged) {
      entry.score = std::numeric_limits<double>::infinity();
    } else {
      const auto report = eval::evaluate(result.model, valid_data, entry.config.context, 1);
      entry.score = report.mse_mean.front();
    }
    entries.push_back(std::move(entry));
  }
  std::stable_sort(entries.begin(), entries.end(), [](const GridEntry& a, const GridEntry& b) {
    if (a.diverged != b.diverged) return !a.diverged;
    return a.score < b.score;
  });
  return entries;
}

#define BB_INSTANTIATE_TRAINING(T)                                                                \
  template std::vector<ag::Var<T>> sequence_frames(ag::Tape<T>&, const raster::VideoSequence&,   \
                                                   int, int);                                     \
  template ag::Var<T> rollout_loss(const models::BoundModel<T>&, std::span<const ag::Var<T>>,    \
                                   int, int, const models::FeedPlan&);                            \
  template ag::Var<T> teacher_forced_loss(const models::BoundModel<T>&,                          \
                                          std::span<const ag::Var<T>>, int, int);                 \
  template ag::Var<T> blind_loss(const models::BoundModel<T>&, std::span<const ag::Var<T>>, int, \
                                 int);                                                            \
  template ag::Var<T> curriculum_loss(const models::BoundModel<T>&,                              \
                                      std::span<const ag::Var<T>>, int, int, int,                 \
                                      CurriculumStrategy);                                        \
  template TrainResult<T> train(const models::ModelSpec&, const raster::Dataset&,                \
                                const TrainConfig&, const EpochCallback&);                        \
  template TrainResult<T> train(models::Model<T>, const raster::Dataset&, const TrainConfig&,    \
                                const EpochCallback&);

BB_INSTANTIATE_TRAINING(float)
BB_INSTANTIATE_TRAINING(double)

#undef BB_INSTANTIATE_TRAINING

}  // namespace bb::training

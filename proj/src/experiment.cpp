#include "bb/experiment.hpp"

#include <cmath>
#include <fstream>

#include "bb/checkpoint.hpp"
#include "bb/error.hpp"
#include "bb/plot.hpp"

namespace bb::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

int DataConfig::count(raster::Split split) const {
  switch (split) {
    case raster::Split::train: return n_train;
    case raster::Split::valid: return n_valid;
    default: return n_test;
  }
}

void DataConfig::validate() const {
  world.validate();
  if (n_train < 1 || n_valid < 1 || n_test < 1) throw ConfigError("split sizes must be >= 1");
  if (frames < 2) throw ConfigError("frames per sequence must be >= 2");
  if (resolution < raster::kMinResolution) {
    throw ConfigError("resolution must be >= " + std::to_string(raster::kMinResolution));
  }
  if (legacy_upsample && resolution % 2 != 0) {
    throw ConfigError("legacy upsampling needs an even resolution");
  }
}

json DataConfig::to_json() const {
  return {{"box_side", world.box_side}, {"n_balls", world.n_balls},
          {"radius", world.radius},     {"speed", world.speed},
          {"n_train", n_train},         {"n_valid", n_valid},
          {"n_test", n_test},           {"frames", frames},
          {"resolution", resolution},   {"legacy_upsample", legacy_upsample}};
}

DataConfig DataConfig::from_json(const json& j) {
  DataConfig d;
  try {
    d.world.box_side = j.value("box_side", d.world.box_side);
    d.world.n_balls = j.value("n_balls", d.world.n_balls);
    d.world.radius = j.value("radius", d.world.radius);
    d.world.speed = j.value("speed", d.world.speed);
    d.n_train = j.value("n_train", d.n_train);
    d.n_valid = j.value("n_valid", d.n_valid);
    d.n_test = j.value("n_test", d.n_test);
    d.frames = j.value("frames", d.frames);
    d.resolution = j.value("resolution", d.resolution);
    d.legacy_upsample = j.value("legacy_upsample", d.legacy_upsample);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed data config: ") + e.what());
  }
  return d;
}

void EvalConfig::validate() const {
  detection.validate();
  if (context < 1 || horizon < 1) throw ConfigError("context and horizon must be >= 1");
}

json EvalConfig::to_json() const {
  return {{"context", context},
          {"horizon", horizon},
          {"threshold", detection.threshold},
          {"erosion_passes", detection.erosion_passes},
          {"matching", matching == eval::Matching::greedy ? "greedy" : "optimal"}};
}

EvalConfig EvalConfig::from_json(const json& j) {
  EvalConfig e;
  try {
    e.context = j.value("context", e.context);
    e.horizon = j.value("horizon", e.horizon);
    e.detection.threshold = j.value("threshold", e.detection.threshold);
    e.detection.erosion_passes = j.value("erosion_passes", e.detection.erosion_passes);
    const std::string m = j.value("matching", std::string("greedy"));
    if (m != "greedy" && m != "optimal") throw ConfigError("unknown matching '" + m + "'");
    e.matching = m == "greedy" ? eval::Matching::greedy : eval::Matching::optimal;
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed eval config: ") + ex.what());
  }
  return e;
}

void ExperimentConfig::validate() const {
  data.validate();
  model.validate();
  train.validate();
  eval.validate();
  if (model.height != data.resolution || model.width != data.resolution) {
    throw ConfigError("model frame size " + std::to_string(model.height) + "x" +
                      std::to_string(model.width) + " does not match data resolution " +
                      std::to_string(data.resolution));
  }
  if (data.frames < train.context + train.horizon) {
    throw ConfigError("sequences of " + std::to_string(data.frames) +
                      " frames are too short for context + training horizon " +
                      std::to_string(train.context + train.horizon));
  }
  if (data.frames < eval.context + eval.horizon) {
    throw ConfigError("sequences of " + std::to_string(data.frames) +
                      " frames are too short for context + evaluation horizon " +
                      std::to_string(eval.context + eval.horizon));
  }
}

json ExperimentConfig::to_json() const {
  return {{"profile", profile},
          {"seed", seed},
          {"data", data.to_json()},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"eval", eval.to_json()}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const ExperimentConfig& base) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig c = base;
  try {
    c.profile = j.value("profile", c.profile);
    c.seed = j.value("seed", c.seed);
    if (j.contains("data")) {
      json merged = c.data.to_json();
      merged.update(j["data"]);
      c.data = DataConfig::from_json(merged);
    }
    if (j.contains("model")) {
      json merged = c.model.to_json();
      merged.update(j["model"]);
      c.model = models::ModelSpec::from_json(merged);
    }
    if (j.contains("train")) {
      json merged = c.train.to_json();
      merged.update(j["train"]);
      c.train = training::TrainConfig::from_json(merged);
    }
    if (j.contains("eval")) {
      json merged = c.eval.to_json();
      merged.update(j["eval"]);
      c.eval = EvalConfig::from_json(merged);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  return c;
}

ExperimentConfig paper_profile(models::Architecture arch) {
  ExperimentConfig c;
  c.profile = "paper";
  c.model = models::best_spec(arch, c.data.resolution);
  return c;
}

namespace {

models::ModelSpec smoke_spec(models::Architecture arch, int resolution) {
  models::ModelSpec s;
  s.arch = arch;
  s.height = s.width = resolution;
  s.kernels = {3, 3};
  s.channels = {10, 1};
  s.hidden_units = {256, resolution * resolution};
  return s;
}

}  // namespace

ExperimentConfig smoke_profile(models::Architecture arch) {
  ExperimentConfig c;
  c.profile = "smoke";
  c.data.n_train = 200;
  c.data.n_valid = 40;
  c.data.n_test = 40;
  c.data.frames = 30;
  c.data.resolution = 30;
  c.model = smoke_spec(arch, c.data.resolution);
  c.train.epochs = 10;
  c.train.minibatch = 8;
  c.train.lr = 0.003;
  c.train.horizon = 5;
  return c;
}

ExperimentConfig profile(const std::string& name, models::Architecture arch) {
  if (name == "paper") return paper_profile(arch);
  if (name == "smoke") return smoke_profile(arch);
  throw ConfigError("unknown profile '" + name + "' (expected paper or smoke)");
}

models::ModelSpec spec_for(const ExperimentConfig& config, models::Architecture arch) {
  models::ModelSpec s = config.profile == "smoke" ? smoke_spec(arch, config.data.resolution)
                                                  : models::best_spec(arch, config.data.resolution);
  s.context = config.model.context;
  s.horizon = config.model.horizon;
  return s;
}

std::uint64_t split_seed(std::uint64_t master, raster::Split split) {
  switch (split) {
    case raster::Split::train: return master;
    case raster::Split::valid: return master + 1'000'000;
    default: return master + 2'000'000;
  }
}

raster::Dataset generate_split(const DataConfig& data, std::uint64_t master_seed,
                               raster::Split split) {
  data.validate();
  raster::GenerateOptions g;
  g.world = data.world;
  g.world.seed = split_seed(master_seed, split);
  g.n_sequences = data.count(split);
  g.n_frames = data.frames;
  g.resolution = data.resolution;
  g.legacy_upsample = data.legacy_upsample;
  g.split = split;
  auto d = raster::generate(g);
  d.master_seed = master_seed;
  return d;
}

fs::path split_path(const fs::path& dir, raster::Split split) {
  return dir / (raster::to_string(split) + ".bbv");
}

std::vector<fs::path> generate_all(const DataConfig& data, std::uint64_t master_seed,
                                   const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
  std::vector<fs::path> paths;
  for (auto split : {raster::Split::train, raster::Split::valid, raster::Split::test}) {
    const auto path = split_path(dir, split);
    raster::write_dataset(generate_split(data, master_seed, split), path);
    paths.push_back(path);
  }
  return paths;
}

raster::Dataset load_split(const fs::path& path, raster::Split split) {
  if (fs::is_directory(path)) {
    const auto file = split_path(path, split);
    if (!fs::exists(file)) {
      throw DataError("'" + path.string() + "' has no " + raster::to_string(split) +
                      " split; run `bb generate --out " + path.string() + "` first");
    }
    return raster::read_dataset(file);
  }
  if (!fs::exists(path)) throw DataError("dataset '" + path.string() + "' does not exist");
  return raster::read_dataset(path);
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

namespace {

void ensure_parent(const fs::path& path) {
  if (!path.has_parent_path()) return;
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) {
    throw DataError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
}

json dataset_summary(const raster::Dataset& d) {
  return {{"split", raster::to_string(d.split)},
          {"master_seed", d.master_seed},
          {"world_seed", d.world.seed},
          {"n_sequences", d.sequences.size()},
          {"frames_per_seq", d.frames_per_seq()},
          {"height", d.height()},
          {"width", d.width()}};
}

}  // namespace

TrainOutcome train_and_save(const models::ModelSpec& spec, const training::TrainConfig& config,
                            const raster::Dataset& data, const fs::path& checkpoint,
                            const json& provenance, const training::EpochCallback& on_epoch) {
  spec.validate();
  config.validate();
  if (data.height() != spec.height || data.width() != spec.width) {
    throw DataError("dataset frames are " + std::to_string(data.height()) + "x" +
                    std::to_string(data.width()) + " but the model expects " +
                    std::to_string(spec.height) + "x" + std::to_string(spec.width));
  }
  ensure_parent(checkpoint);
  auto result = training::train<float>(spec, data, config, on_epoch);

  TrainOutcome out;
  out.checkpoint = checkpoint;
  out.loss_log = fs::path(checkpoint.string() + ".loss.csv");
  out.steps = result.steps;
  out.diverged = result.diverged;
  out.divergence = result.divergence;
  if (!result.log.empty()) out.final_loss = result.log.back().loss;

  json meta{{"train", config.to_json()},
            {"seed", config.seed},
            {"data", dataset_summary(data)},
            {"steps", result.steps},
            {"diverged", result.diverged},
            {"provenance", provenance}};
  if (result.diverged) meta["divergence"] = result.divergence;
  checkpoint::save(result.model, checkpoint, meta);
  training::write_loss_log(result.log, out.loss_log);
  return out;
}

eval::EvalReport evaluate_checkpoint(const fs::path& checkpoint, const raster::Dataset& data,
                                     const EvalConfig& config, const fs::path& csv) {
  config.validate();
  const auto loaded = checkpoint::load<float>(checkpoint);
  auto report = eval::evaluate(loaded.model, data, config.context, config.horizon, config.detection,
                               config.matching);
  ensure_parent(csv);
  eval::write_report_csv(report, csv);
  json twin{{"checkpoint", checkpoint.filename().string()},
            {"model", loaded.model.spec().to_json()},
            {"checkpoint_metadata", loaded.metadata},
            {"eval", config.to_json()},
            {"data", dataset_summary(data)},
            {"mse_horizon_mean", report.mse_horizon_mean()},
            {"cd_horizon_mean", report.cd_horizon_mean()},
            {"mse_final", report.mse_mean.back()},
            {"cd_final", report.cd_mean.back()}};
  write_json(twin, fs::path(csv.string() + ".json"));
  return report;
}

std::vector<fs::path> write_report(const std::vector<fs::path>& csvs, const fs::path& out_dir) {
  if (csvs.empty()) throw ConfigError("report: no CSV files given");
  std::vector<eval::CurveSet> curves;
  for (const auto& p : csvs) curves.push_back(eval::read_report_csv(p));
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create directory '" + out_dir.string() + "': " + ec.message());
  const fs::path mse = out_dir / "mse.svg", cd = out_dir / "centroid.svg";
  plot::write_svg(plot::line_chart_svg(curves, plot::Metric::mse, {"Scaled MSE per predicted frame"}),
                  mse);
  plot::write_svg(
      plot::line_chart_svg(curves, plot::Metric::centroid, {"Centroid distance per predicted frame"}),
      cd);
  return {mse, cd};
}

PipelineResult run_pipeline(const ExperimentConfig& config, const fs::path& dir,
                            const training::EpochCallback& on_epoch) {
  ExperimentConfig cfg = config;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  generate_all(cfg.data, cfg.seed, dir / "data");
  const auto train_data = load_split(dir / "data", raster::Split::train);
  const auto test_data = load_split(dir / "data", raster::Split::test);
  write_json(cfg.to_json(), dir / "config.json");

  PipelineResult result;
  const auto ckpt = dir / (models::to_string(cfg.model.arch) + ".ckpt.json");
  result.training = train_and_save(cfg.model, cfg.train, train_data, ckpt,
                                   {{"command", "pipeline"}, {"config", cfg.to_json()}}, on_epoch);
  if (result.training.diverged) return result;
  result.csv = dir / "report.csv";
  result.report = evaluate_checkpoint(ckpt, test_data, cfg.eval, result.csv);
  write_report({result.csv}, dir);
  return result;
}

CurriculumComparison compare_curriculum(const ExperimentConfig& config, int n,
                                        const raster::Dataset& train_data,
                                        const raster::Dataset& test_data, const fs::path& out_dir) {
  if (n < 1) throw ConfigError("compare-curriculum: --n must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create directory '" + out_dir.string() + "': " + ec.message());

  const auto spec = spec_for(config, models::Architecture::seq2seq);
  CurriculumComparison result;
  std::vector<fs::path> csvs;
  for (auto mode : {training::Mode::forced, training::Mode::curriculum}) {
    for (int i = 0; i < n; ++i) {
      training::TrainConfig tc = config.train;
      tc.mode = mode;
      tc.seed = config.seed + static_cast<std::uint64_t>(i);
      const std::string stem = training::to_string(mode) + "_" + std::to_string(i);
      const auto ckpt = out_dir / (stem + ".ckpt.json");
      const auto outcome =
          train_and_save(spec, tc, train_data, ckpt, {{"command", "compare-curriculum"}});
      const auto csv = out_dir / (stem + ".csv");
      auto report = evaluate_checkpoint(ckpt, test_data, config.eval, csv);
      csvs.push_back(csv);
      result.runs.push_back({mode, tc.seed, ckpt, std::move(report), outcome.diverged});
    }
  }

  result.summary = out_dir / "paired.csv";
  std::ofstream out(result.summary, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + result.summary.string() + "'");
  out << "mode,seed,mse_horizon_mean,cd_horizon_mean,mse_final,cd_final,diverged\n";
  char buf[256];
  for (const auto& run : result.runs) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%.9g,%.9g,%.9g,%.9g,%d\n",
                  training::to_string(run.mode).c_str(), static_cast<unsigned long long>(run.seed),
                  run.report.mse_horizon_mean(), run.report.cd_horizon_mean(),
                  run.report.mse_mean.back(), run.report.cd_mean.back(), run.diverged ? 1 : 0);
    out << buf;
  }
  out.close();
  write_json({{"config", config.to_json()}, {"n", n}}, fs::path(result.summary.string() + ".json"));
  write_report(csvs, out_dir);
  return result;
}

}  // namespace bb::experiment

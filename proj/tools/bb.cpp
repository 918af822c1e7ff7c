#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include "bb/checkpoint.hpp"
#include "bb/error.hpp"
#include "bb/eval.hpp"
#include "bb/experiment.hpp"

namespace fs = std::filesystem;
using namespace bb;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDiverged = 4 };

struct Globals {
  std::string profile = "paper";
  std::string config_path;
  int threads = 0;
  std::optional<std::uint64_t> seed;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void apply_threads(int flag) {
  int n = flag;
  if (n <= 0) {
    if (const char* env = std::getenv("BB_THREADS")) {
      try {
        n = std::stoi(env);
      } catch (const std::exception&) {
        throw ConfigError(std::string("BB_THREADS must be an integer, got '") + env + "'");
      }
      if (n <= 0) throw ConfigError("BB_THREADS must be >= 1");
    }
  }
  if (n > 0) omp_set_num_threads(n);
}

// Profile defaults, then the config file, then the architecture.
experiment::ExperimentConfig resolve(const Globals& g, std::optional<models::Architecture> arch) {
  auto cfg = experiment::profile(g.profile, arch.value_or(models::Architecture::convlstm));
  if (!g.config_path.empty()) {
    const json file = experiment::read_json(g.config_path);
    cfg = experiment::ExperimentConfig::from_json(file, cfg);
    const bool file_arch_matches =
        file.contains("model") && file["model"].contains("architecture") && arch &&
        models::architecture_from_string(file["model"]["architecture"].get<std::string>()) == *arch;
    if (arch && !file_arch_matches) cfg.model = experiment::spec_for(cfg, *arch);
  }
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

// Adapts the model to the frame size of the data it will see.
void fit_to_data(experiment::ExperimentConfig& cfg, const raster::Dataset& data) {
  if (data.height() != cfg.data.resolution || data.width() != cfg.data.resolution) {
    cfg.data.resolution = data.height();
    const auto ctx = cfg.model.context, hz = cfg.model.horizon;
    cfg.model = experiment::spec_for(cfg, cfg.model.arch);
    cfg.model.context = ctx;
    cfg.model.horizon = hz;
  }
}

training::EpochCallback progress(const std::string& label) {
  return [label](int epoch, double loss) {
    std::fprintf(stderr, "[%s] epoch %d loss %.6f\n", label.c_str(), epoch, loss);
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bouncing-balls video prediction benchmark"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--profile", g.profile, "Defaults profile: paper or smoke")
      ->check(CLI::IsMember({"paper", "smoke"}));
  app.add_option("--config", g.config_path, "Experiment config JSON")->check(CLI::ExistingFile);
  app.add_option("--threads", g.threads, "Worker threads (default: BB_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Master seed");

  // generate
  auto* gen = app.add_subcommand("generate", "Simulate and render train/valid/test splits");
  std::optional<int> g_seqs, g_frames, g_size, g_balls;
  std::optional<double> g_radius, g_speed;
  std::string g_out = "data";
  bool g_legacy = false;
  gen->add_option("--seqs", g_seqs, "Training sequences; valid and test get a fifth each");
  gen->add_option("--frames", g_frames, "Frames per sequence");
  gen->add_option("--size", g_size, "Frame side in pixels");
  gen->add_option("--balls", g_balls, "Balls per world");
  gen->add_option("--radius", g_radius, "Ball radius in box units");
  gen->add_option("--speed", g_speed, "Ball speed in box units per frame");
  gen->add_option("--seed", seed_value, "Master seed");
  gen->add_option("--out", g_out, "Output directory");
  gen->add_flag("--legacy-upsample", g_legacy, "Render at half size and upsample 2x");

  // train
  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  std::string t_model = "convlstm", t_data = "data", t_out, t_strategy, t_optim;
  std::optional<std::string> t_mode;
  std::optional<int> t_epochs, t_batch, t_horizon;
  std::optional<double> t_lr, t_clip;
  tr->add_option("--model", t_model, "lstm | convlstm | seq2seq | seq2seq-multi")
      ->check(CLI::IsMember({"lstm", "convlstm", "seq2seq", "seq2seq-multi", "seq2seq_multi"}));
  tr->add_option("--config", g.config_path, "Experiment config JSON")->check(CLI::ExistingFile);
  tr->add_option("--data", t_data, "Training dataset file or data directory");
  tr->add_option("--mode", t_mode, "forced | blind | curriculum")
      ->check(CLI::IsMember({"forced", "blind", "curriculum"}));
  tr->add_option("--epochs", t_epochs, "Epochs");
  tr->add_option("--lr", t_lr, "Learning rate");
  tr->add_option("--batch", t_batch, "Minibatch size");
  tr->add_option("--horizon", t_horizon, "Prediction steps per training sequence");
  tr->add_option("--strategy", t_strategy, "Curriculum placement: tail | head");
  tr->add_option("--optimizer", t_optim, "adam | sgd");
  tr->add_option("--clip", t_clip, "Global gradient-norm cap (<= 0 disables)");
  tr->add_option("--seed", seed_value, "Seed for initialization and shuffling");
  tr->add_option("--out", t_out, "Checkpoint path (default runs/<model>_<mode>.ckpt.json)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Per-frame MSE and centroid distance of a checkpoint");
  std::string e_ckpt, e_data = "data", e_out = "report.csv", e_baseline, e_matching;
  std::optional<int> e_context, e_horizon;
  ev->add_option("--ckpt", e_ckpt, "Checkpoint manifest");
  ev->add_option("--baseline", e_baseline, "Evaluate a reference predictor instead: null | oracle")
      ->check(CLI::IsMember({"null", "oracle"}));
  ev->add_option("--data", e_data, "Test dataset file or data directory");
  ev->add_option("--context", e_context, "Context frames");
  ev->add_option("--horizon", e_horizon, "Predicted frames");
  ev->add_option("--matching", e_matching, "Centroid matching: greedy | optimal")
      ->check(CLI::IsMember({"greedy", "optimal"}));
  ev->add_option("--out", e_out, "Report CSV");

  // report
  auto* rep = app.add_subcommand("report", "SVG charts from evaluation CSVs");
  std::vector<std::string> r_csv;
  std::string r_out = "report";
  rep->add_option("--csv", r_csv, "Report CSV files")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", r_out, "Output directory");

  // gridsearch
  auto* gs = app.add_subcommand("gridsearch", "One-at-a-time hyperparameter search");
  std::string s_axis, s_values, s_model = "convlstm", s_data = "data", s_out = "gridsearch.json";
  gs->add_option("--axis", s_axis, "lr | layers | kernel | channels | hidden_units | epochs | minibatch")
      ->required();
  gs->add_option("--values", s_values, "Comma-separated values")->required();
  gs->add_option("--model", s_model, "Architecture")
      ->check(CLI::IsMember({"lstm", "convlstm", "seq2seq", "seq2seq-multi", "seq2seq_multi"}));
  gs->add_option("--data", s_data, "Data directory with train and valid splits");
  gs->add_option("--out", s_out, "Ranked results JSON");

  // inspect-hidden
  auto* ih = app.add_subcommand("inspect-hidden", "Dump hidden-state activations as PGM images");
  std::string h_ckpt, h_data = "data", h_out = "hidden";
  int h_layer = 0, h_seq = 0;
  std::optional<int> h_context;
  ih->add_option("--ckpt", h_ckpt, "Checkpoint manifest")->required();
  ih->add_option("--data", h_data, "Dataset file or data directory (test split)");
  ih->add_option("--layer", h_layer, "Layer index");
  ih->add_option("--seq", h_seq, "Sequence index");
  ih->add_option("--context", h_context, "Frames fed before the dump");
  ih->add_option("--out", h_out, "Output directory");

  // compare-curriculum
  auto* cc = app.add_subcommand("compare-curriculum",
                                "Train n teacher-forced and n curriculum seq2seq models");
  int c_n = 3;
  std::string c_data = "data", c_out = "curriculum";
  cc->add_option("--n", c_n, "Models per regimen")->check(CLI::PositiveNumber);
  cc->add_option("--data", c_data, "Data directory with train and test splits");
  cc->add_option("--out", c_out, "Output directory");

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "generate, train, evaluate and report in one run");
  std::string p_out = "run";
  std::string p_model = "convlstm";
  pl->add_option("--model", p_model, "Architecture")
      ->check(CLI::IsMember({"lstm", "convlstm", "seq2seq", "seq2seq-multi", "seq2seq_multi"}));
  pl->add_option("--out", p_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  if (seed_opt->count() > 0 || (gen->parsed() && gen->get_option("--seed")->count() > 0) ||
      (tr->parsed() && tr->get_option("--seed")->count() > 0)) {
    g.seed = seed_value;
  }

  try {
    apply_threads(g.threads);

    if (gen->parsed()) {
      auto cfg = resolve(g, std::nullopt);
      if (g_seqs) {
        cfg.data.n_train = *g_seqs;
        cfg.data.n_valid = cfg.data.n_test = std::max(1, *g_seqs / 5);
      }
      if (g_frames) cfg.data.frames = *g_frames;
      if (g_size) cfg.data.resolution = *g_size;
      if (g_balls) cfg.data.world.n_balls = *g_balls;
      if (g_radius) cfg.data.world.radius = *g_radius;
      if (g_speed) cfg.data.world.speed = *g_speed;
      cfg.data.legacy_upsample = cfg.data.legacy_upsample || g_legacy;
      const auto paths = experiment::generate_all(cfg.data, cfg.seed, g_out);
      experiment::write_json({{"data", cfg.data.to_json()}, {"seed", cfg.seed}},
                             fs::path(g_out) / "generate.json");
      for (const auto& p : paths) std::printf("%s\n", p.string().c_str());
      return kOk;
    }

    if (tr->parsed()) {
      const auto arch = models::architecture_from_string(t_model);
      auto cfg = resolve(g, arch);
      if (t_mode) cfg.train.mode = training::mode_from_string(*t_mode);
      if (t_epochs) cfg.train.epochs = *t_epochs;
      if (t_lr) cfg.train.lr = *t_lr;
      if (t_batch) cfg.train.minibatch = *t_batch;
      if (t_horizon) cfg.train.horizon = *t_horizon;
      if (!t_strategy.empty()) cfg.train.strategy = training::strategy_from_string(t_strategy);
      if (!t_optim.empty()) cfg.train.optimizer = optim::kind_from_string(t_optim);
      if (t_clip) cfg.train.clip_norm = *t_clip;
      cfg.train.seed = cfg.seed;
      cfg.train.validate();
      const auto data = experiment::load_split(t_data, raster::Split::train);
      fit_to_data(cfg, data);
      const fs::path out = t_out.empty() ? fs::path("runs") / (models::to_string(arch) + "_" +
                                                               training::to_string(cfg.train.mode) +
                                                               ".ckpt.json")
                                         : fs::path(t_out);
      const auto outcome =
          experiment::train_and_save(cfg.model, cfg.train, data, out,
                                     {{"command", "train"}, {"config", cfg.to_json()}},
                                     progress(models::to_string(arch)));
      std::printf("checkpoint %s\nloss log %s\nsteps %ld\n", outcome.checkpoint.string().c_str(),
                  outcome.loss_log.string().c_str(), outcome.steps);
      if (outcome.diverged) {
        std::fprintf(stderr, "error: %s (last good parameters saved to %s)\n",
                     outcome.divergence.c_str(), outcome.checkpoint.string().c_str());
        return kDiverged;
      }
      return kOk;
    }

    if (ev->parsed()) {
      auto cfg = resolve(g, std::nullopt);
      if (e_context) cfg.eval.context = *e_context;
      if (e_horizon) cfg.eval.horizon = *e_horizon;
      if (!e_matching.empty()) {
        cfg.eval.matching = e_matching == "optimal" ? eval::Matching::optimal : eval::Matching::greedy;
      }
      const auto data = experiment::load_split(e_data, raster::Split::test);
      eval::EvalReport report;
      if (!e_baseline.empty()) {
        if (!e_ckpt.empty()) throw ConfigError("evaluate: give either --ckpt or --baseline, not both");
        const auto predictor = e_baseline == "null" ? eval::null_predictor() : eval::oracle_predictor();
        report = eval::evaluate(predictor, data, cfg.eval.context, cfg.eval.horizon,
                                cfg.eval.detection, cfg.eval.matching);
        eval::write_report_csv(report, e_out);
        experiment::write_json({{"baseline", e_baseline},
                                {"eval", cfg.eval.to_json()},
                                {"data_master_seed", data.master_seed},
                                {"mse_horizon_mean", report.mse_horizon_mean()},
                                {"cd_horizon_mean", report.cd_horizon_mean()}},
                               fs::path(e_out + ".json"));
      } else {
        if (e_ckpt.empty()) throw ConfigError("evaluate: --ckpt is required (or --baseline)");
        report = experiment::evaluate_checkpoint(e_ckpt, data, cfg.eval, e_out);
      }
      std::printf("frames %d  mean scaled MSE %.4f  mean centroid distance %.4f\n", report.horizon,
                  report.mse_horizon_mean(), report.cd_horizon_mean());
      std::printf("report %s\n", e_out.c_str());
      return kOk;
    }

    if (rep->parsed()) {
      std::vector<fs::path> csvs(r_csv.begin(), r_csv.end());
      for (const auto& p : experiment::write_report(csvs, r_out)) std::printf("%s\n", p.string().c_str());
      return kOk;
    }

    if (gs->parsed()) {
      const auto arch = models::architecture_from_string(s_model);
      auto cfg = resolve(g, arch);
      const auto train_data = experiment::load_split(s_data, raster::Split::train);
      const auto valid_data = experiment::load_split(s_data, raster::Split::valid);
      fit_to_data(cfg, train_data);
      cfg.train.seed = cfg.seed;
      const auto values = split_list(s_values);
      const auto entries = training::grid_search(cfg.model, cfg.train, s_axis, values, train_data,
                                                 valid_data);
      json out{{"axis", s_axis}, {"config", cfg.to_json()}, {"results", json::array()}};
      std::printf("rank  %-12s  one-step MSE\n", s_axis.c_str());
      int rank = 1;
      for (const auto& e : entries) {
        out["results"].push_back({{"value", e.value},
                                  {"score", e.diverged ? json(nullptr) : json(e.score)},
                                  {"diverged", e.diverged},
                                  {"model", e.spec.to_json()},
                                  {"train", e.config.to_json()},
                                  {"final_loss", e.log.empty() ? 0.0 : e.log.back().loss}});
        if (e.diverged) {
          std::printf("%4d  %-12s  diverged\n", rank++, e.value.c_str());
        } else {
          std::printf("%4d  %-12s  %.4f\n", rank++, e.value.c_str(), e.score);
        }
      }
      experiment::write_json(out, s_out);
      return kOk;
    }

    if (ih->parsed()) {
      const auto loaded = checkpoint::load<float>(h_ckpt);
      const auto data = experiment::load_split(h_data, raster::Split::test);
      if (h_seq < 0 || h_seq >= static_cast<int>(data.sequences.size())) {
        throw ConfigError("--seq " + std::to_string(h_seq) + " out of range [0, " +
                          std::to_string(data.sequences.size()) + ")");
      }
      const int context = h_context.value_or(loaded.model.spec().context);
      const auto grid = eval::dump_hidden_states(loaded.model, data.sequences[h_seq], context, h_layer);
      fs::create_directories(h_out);
      const std::string prefix = "layer" + std::to_string(h_layer);
      eval::write_pgm(grid.grid, fs::path(h_out) / (prefix + "_grid.pgm"));
      for (std::size_t c = 0; c < grid.tiles.size(); ++c) {
        eval::write_pgm(grid.tiles[c], fs::path(h_out) / (prefix + "_ch" + std::to_string(c) + ".pgm"));
      }
      experiment::write_json({{"checkpoint", h_ckpt},
                              {"checkpoint_metadata", loaded.metadata},
                              {"sequence", h_seq},
                              {"context", context},
                              {"layer", h_layer},
                              {"tiles", grid.tiles.size()}},
                             fs::path(h_out) / (prefix + ".json"));
      std::printf("%zu channel tiles written to %s\n", grid.tiles.size(), h_out.c_str());
      return kOk;
    }

    if (cc->parsed()) {
      auto cfg = resolve(g, models::Architecture::seq2seq);
      const auto train_data = experiment::load_split(c_data, raster::Split::train);
      const auto test_data = experiment::load_split(c_data, raster::Split::test);
      fit_to_data(cfg, train_data);
      const auto result = experiment::compare_curriculum(cfg, c_n, train_data, test_data, c_out);
      for (const auto& run : result.runs) {
        std::printf("%-10s seed %llu  MSE %.4f  centroid %.4f%s\n",
                    training::to_string(run.mode).c_str(),
                    static_cast<unsigned long long>(run.seed), run.report.mse_horizon_mean(),
                    run.report.cd_horizon_mean(), run.diverged ? "  (diverged)" : "");
      }
      std::printf("summary %s\n", result.summary.string().c_str());
      return kOk;
    }

    if (pl->parsed()) {
      const auto arch = models::architecture_from_string(p_model);
      const auto cfg = resolve(g, arch);
      const auto result = experiment::run_pipeline(cfg, p_out, progress(models::to_string(arch)));
      if (result.training.diverged) {
        std::fprintf(stderr, "error: %s\n", result.training.divergence.c_str());
        return kDiverged;
      }
      std::printf("mean scaled MSE %.4f  mean centroid distance %.4f\nreport %s\n",
                  result.report.mse_horizon_mean(), result.report.cd_horizon_mean(),
                  result.csv.string().c_str());
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const DivergedError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}

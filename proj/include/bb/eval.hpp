#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bb/models.hpp"
#include "bb/raster.hpp"

namespace bb::eval {

struct DetectionConfig {
  double threshold = 0.5;
  int erosion_passes = 1;  // 3x3 cross structuring element

  void validate() const;
};

/// Pixel coordinates: x is the column, y the row, both measured at pixel centers.
struct Centroid {
  double x = 0.0;
  double y = 0.0;
};

/// Threshold, erode, label 8-connected components and return the
/// intensity-weighted centroid of every component with at least 2 pixels.
/// Components are listed in raster order of their first pixel.
std::vector<Centroid> detect_balls(const raster::Frame& frame, const DetectionConfig& config = {});

enum class Matching { greedy, optimal };

/// Length of the frame diagonal: sqrt(H^2 + W^2), 60*sqrt(2) for 60x60.
double count_penalty(int height, int width);

/// Sum over predicted centroids of the distance to their matched
/// ground-truth centroid, plus `penalty` per unit of count mismatch. Both
/// lists are sorted by (y, x) first, so the result does not depend on their
/// order. Greedy matching pairs each predicted centroid, in sorted order,
/// with the nearest ground-truth centroid not yet taken.
double centroid_distance(std::vector<Centroid> predicted, std::vector<Centroid> truth,
                         double penalty, Matching matching = Matching::greedy);

double centroid_distance(const raster::Frame& predicted, const raster::Frame& truth,
                         const DetectionConfig& config = {}, Matching matching = Matching::greedy);

/// Summed squared pixel error in the [0, 1] view, divided by 4.
double mse_scaled(const raster::Frame& predicted, const raster::Frame& truth);

struct EvalReport {
  int context = 0;
  int horizon = 0;
  int n_sequences = 0;
  std::vector<double> mse_mean, mse_se;
  std::vector<double> cd_mean, cd_se;
  /// False where predictions produce more than 3x the ground-truth
  /// component count, i.e. the frames are mostly noise.
  std::vector<bool> cd_available;
  std::vector<std::vector<double>> mse_raw;  // [sequence][frame]
  std::vector<std::vector<double>> cd_raw;
  std::vector<long> predicted_components;    // per frame, summed over sequences
  std::vector<long> truth_components;

  double mse_horizon_mean() const;
  /// NaN when any frame's centroid distance is unavailable.
  double cd_horizon_mean() const;
};

/// Produces `horizon` frames in the [0, 1] view from a sequence, given
/// `context` frames. Must be safe to call concurrently.
using Predictor =
    std::function<std::vector<raster::Frame>(const raster::VideoSequence&, int context, int horizon)>;

/// Autoregressive rollout of a trained model (future decoder for seq2seq models).
Predictor model_predictor(const models::Model<float>& model);
/// Always predicts black frames.
Predictor null_predictor();
/// Copies the ground-truth future.
Predictor oracle_predictor();

/// Both metrics for every frame index and sequence; means with standard
/// errors across sequences. Sequences are evaluated in parallel and
/// aggregated in order.
EvalReport evaluate(const Predictor& predictor, const raster::Dataset& dataset, int context,
                    int horizon, const DetectionConfig& detection = {},
                    Matching matching = Matching::greedy);
EvalReport evaluate(const models::Model<float>& model, const raster::Dataset& dataset, int context,
                    int horizon, const DetectionConfig& detection = {},
                    Matching matching = Matching::greedy);

/// frame_index,mse_mean,mse_se,cd_mean,cd_se,n_sequences; unavailable
/// centroid values are written as "n.a.".
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);

struct CurveSet {
  std::string name;
  std::vector<int> frame_index;
  std::vector<double> mse_mean, mse_se, cd_mean, cd_se;  // NaN where n.a.
};
CurveSet read_report_csv(const std::filesystem::path& path);

struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};

void write_pgm(const GrayImage& image, const std::filesystem::path& path);

struct HiddenGrid {
  GrayImage grid;                 // tiles separated by 1-pixel black borders
  std::vector<GrayImage> tiles;   // one per channel
};

/// Hidden state h of `layer` after feeding the first `context` frames
/// (through the encoder for seq2seq models), each channel min-max
/// normalized to [0, 255]; constant channels map to mid-gray.
/// Throws ConfigError for the fully connected LSTM or a bad layer index.
HiddenGrid dump_hidden_states(const models::Model<float>& model,
                              const raster::VideoSequence& sequence, int context, int layer);

}  // namespace bb::eval

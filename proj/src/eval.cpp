#include "bb/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "bb/error.hpp"

namespace bb::eval {

void DetectionConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("detection threshold must lie in (0, 1)");
  if (erosion_passes < 0) throw ConfigError("erosion_passes must be >= 0");
}

namespace {

std::vector<std::uint8_t> erode_cross(const std::vector<std::uint8_t>& mask, int h, int w) {
  std::vector<std::uint8_t> out(mask.size(), 0);
  auto on = [&](int r, int c) { return r >= 0 && r < h && c >= 0 && c < w && mask[r * w + c]; };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      out[r * w + c] = on(r, c) && on(r - 1, c) && on(r + 1, c) && on(r, c - 1) && on(r, c + 1);
    }
  }
  return out;
}

}  // namespace

std::vector<Centroid> detect_balls(const raster::Frame& frame, const DetectionConfig& config) {
  config.validate();
  const int h = frame.height, w = frame.width;
  std::vector<std::uint8_t> mask(frame.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = frame.pixels[i] >= config.threshold;
  for (int p = 0; p < config.erosion_passes; ++p) mask = erode_cross(mask, h, w);

  std::vector<int> label(mask.size(), -1);
  std::vector<Centroid> centroids;
  std::vector<int> stack;
  int next_label = 0;
  for (int start = 0; start < h * w; ++start) {
    if (!mask[start] || label[start] >= 0) continue;
    double mass = 0.0, sx = 0.0, sy = 0.0;
    int area = 0;
    label[start] = next_label;
    stack.assign(1, start);
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      const int r = idx / w, c = idx % w;
      const double v = frame.pixels[idx];
      mass += v;
      sx += v * c;
      sy += v * r;
      ++area;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          const int n = rr * w + cc;
          if (mask[n] && label[n] < 0) {
            label[n] = next_label;
            stack.push_back(n);
          }
        }
      }
    }
    ++next_label;
    if (area >= 2 && mass > 0.0) centroids.push_back({sx / mass, sy / mass});
  }
  return centroids;
}

double count_penalty(int height, int width) {
  return std::hypot(static_cast<double>(height), static_cast<double>(width));
}

namespace {

double dist(const Centroid& a, const Centroid& b) { return std::hypot(a.x - b.x, a.y - b.y); }

void sort_centroids(std::vector<Centroid>& v) {
  std::sort(v.begin(), v.end(), [](const Centroid& a, const Centroid& b) {
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  });
}

double greedy_cost(const std::vector<Centroid>& pred, const std::vector<Centroid>& truth) {
  std::vector<bool> taken(truth.size(), false);
  std::size_t remaining = truth.size();
  double total = 0.0;
  for (const auto& p : pred) {
    if (remaining == 0) break;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (taken[j]) continue;
      const double d = dist(p, truth[j]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    taken[best] = true;
    --remaining;
    total += best_d;
  }
  return total;
}

// Minimum-cost matching of every element of `small` to a distinct element of
// `large`, by dynamic programming over subsets of `large`.
double optimal_cost(const std::vector<Centroid>& small, const std::vector<Centroid>& large) {
  const std::size_t m = large.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best(std::size_t{1} << m, inf);
  best[0] = 0.0;
  for (std::size_t mask = 0; mask < best.size(); ++mask) {
    if (best[mask] == inf) continue;
    const int i = std::__popcount(mask);
    if (static_cast<std::size_t>(i) >= small.size()) continue;
    for (std::size_t j = 0; j < m; ++j) {
      if (mask & (std::size_t{1} << j)) continue;
      const std::size_t next = mask | (std::size_t{1} << j);
      best[next] = std::min(best[next], best[mask] + dist(small[i], large[j]));
    }
  }
  double result = inf;
  for (std::size_t mask = 0; mask < best.size(); ++mask) {
    if (static_cast<std::size_t>(std::__popcount(mask)) == small.size()) result = std::min(result, best[mask]);
  }
  return result;
}

constexpr std::size_t kMaxOptimalMatching = 16;

}  // namespace

double centroid_distance(std::vector<Centroid> predicted, std::vector<Centroid> truth,
                         double penalty, Matching matching) {
  sort_centroids(predicted);
  sort_centroids(truth);
  const double mismatch =
      penalty * std::abs(static_cast<double>(predicted.size()) - static_cast<double>(truth.size()));
  if (predicted.empty() || truth.empty()) return mismatch;
  double matched;
  if (matching == Matching::optimal &&
      std::max(predicted.size(), truth.size()) <= kMaxOptimalMatching) {
    matched = predicted.size() <= truth.size() ? optimal_cost(predicted, truth)
                                               : optimal_cost(truth, predicted);
  } else {
    matched = greedy_cost(predicted, truth);
  }
  return matched + mismatch;
}

double centroid_distance(const raster::Frame& predicted, const raster::Frame& truth,
                         const DetectionConfig& config, Matching matching) {
  if (predicted.height != truth.height || predicted.width != truth.width) {
    throw ShapeError("centroid_distance: frame dimensions differ");
  }
  return centroid_distance(detect_balls(predicted, config), detect_balls(truth, config),
                           count_penalty(truth.height, truth.width), matching);
}

double mse_scaled(const raster::Frame& predicted, const raster::Frame& truth) {
  if (predicted.height != truth.height || predicted.width != truth.width ||
      predicted.size() != truth.size()) {
    throw ShapeError("mse_scaled: frame dimensions differ (" + std::to_string(predicted.height) +
                     "x" + std::to_string(predicted.width) + " vs " +
                     std::to_string(truth.height) + "x" + std::to_string(truth.width) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = predicted.pixels[i] - truth.pixels[i];
    s += d * d;
  }
  return s / 4.0;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

double EvalReport::mse_horizon_mean() const { return mean_of(mse_mean); }
double EvalReport::cd_horizon_mean() const {
  if (std::find(cd_available.begin(), cd_available.end(), false) != cd_available.end()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return mean_of(cd_mean);
}

Predictor model_predictor(const models::Model<float>& model) {
  return [&model](const raster::VideoSequence& seq, int context, int horizon) {
    std::vector<ag::Tensor<float>> ctx;
    for (int i = 0; i < context; ++i) {
      ctx.emplace_back(ag::Shape{1, seq.height, seq.width}, seq.normalized<float>(i));
    }
    const auto out = models::generate<float>(model, ctx, horizon);
    std::vector<raster::Frame> frames;
    for (const auto& t : out) {
      raster::Frame f(seq.height, seq.width);
      for (std::size_t i = 0; i < f.size(); ++i) {
        f.pixels[i] = std::clamp((static_cast<double>(t.values[i]) + 1.0) / 2.0, 0.0, 1.0);
      }
      frames.push_back(std::move(f));
    }
    return frames;
  };
}

Predictor null_predictor() {
  return [](const raster::VideoSequence& seq, int, int horizon) {
    return std::vector<raster::Frame>(horizon, raster::Frame(seq.height, seq.width, 0.0));
  };
}

Predictor oracle_predictor() {
  return [](const raster::VideoSequence& seq, int context, int horizon) {
    std::vector<raster::Frame> frames;
    for (int i = 0; i < horizon; ++i) frames.push_back(seq.frame(context + i));
    return frames;
  };
}

EvalReport evaluate(const Predictor& predictor, const raster::Dataset& dataset, int context,
                    int horizon, const DetectionConfig& detection, Matching matching) {
  detection.validate();
  if (context < 1 || horizon < 1) throw ConfigError("evaluate: context and horizon must be >= 1");
  if (dataset.sequences.empty()) throw DataError("evaluate: dataset is empty");
  if (dataset.frames_per_seq() < context + horizon) {
    throw DataError("evaluate: sequences have " + std::to_string(dataset.frames_per_seq()) +
                    " frames, need context + horizon = " + std::to_string(context + horizon));
  }
  const int n = static_cast<int>(dataset.sequences.size());
  EvalReport report;
  report.context = context;
  report.horizon = horizon;
  report.n_sequences = n;
  report.mse_raw.assign(n, std::vector<double>(horizon));
  report.cd_raw.assign(n, std::vector<double>(horizon));
  std::vector<std::vector<long>> pred_count(n, std::vector<long>(horizon));
  std::vector<std::vector<long>> truth_count(n, std::vector<long>(horizon));

  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (int s = 0; s < n; ++s) {
    try {
      const auto& seq = dataset.sequences[s];
      const auto predicted = predictor(seq, context, horizon);
      if (static_cast<int>(predicted.size()) != horizon) {
        throw std::runtime_error("predictor returned the wrong number of frames");
      }
      const double penalty = count_penalty(seq.height, seq.width);
      for (int i = 0; i < horizon; ++i) {
        const raster::Frame truth = seq.frame(context + i);
        report.mse_raw[s][i] = mse_scaled(predicted[i], truth);
        const auto pc = detect_balls(predicted[i], detection);
        const auto tc = detect_balls(truth, detection);
        pred_count[s][i] = static_cast<long>(pc.size());
        truth_count[s][i] = static_cast<long>(tc.size());
        report.cd_raw[s][i] = centroid_distance(pc, tc, penalty, matching);
      }
    } catch (const std::exception& e) {
#pragma omp critical
      failure = e.what();
    }
  }
  if (!failure.empty()) throw DataError("evaluate: " + failure);

  auto summarize = [n](const std::vector<std::vector<double>>& raw, int i, double& mean, double& se) {
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += raw[k][i];
    mean = s / n;
    double ss = 0.0;
    for (int k = 0; k < n; ++k) ss += (raw[k][i] - mean) * (raw[k][i] - mean);
    se = n > 1 ? std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n)) : 0.0;
  };
  report.mse_mean.resize(horizon);
  report.mse_se.resize(horizon);
  report.cd_mean.resize(horizon);
  report.cd_se.resize(horizon);
  report.cd_available.resize(horizon);
  report.predicted_components.assign(horizon, 0);
  report.truth_components.assign(horizon, 0);
  for (int i = 0; i < horizon; ++i) {
    summarize(report.mse_raw, i, report.mse_mean[i], report.mse_se[i]);
    summarize(report.cd_raw, i, report.cd_mean[i], report.cd_se[i]);
    for (int s = 0; s < n; ++s) {
      report.predicted_components[i] += pred_count[s][i];
      report.truth_components[i] += truth_count[s][i];
    }
    report.cd_available[i] = report.predicted_components[i] <= 3 * report.truth_components[i];
  }
  return report;
}

EvalReport evaluate(const models::Model<float>& model, const raster::Dataset& dataset, int context,
                    int horizon, const DetectionConfig& detection, Matching matching) {
  if (dataset.height() != model.spec().height || dataset.width() != model.spec().width) {
    throw DataError("evaluate: dataset frames are " + std::to_string(dataset.height()) + "x" +
                    std::to_string(dataset.width()) + " but the checkpoint expects " +
                    std::to_string(model.spec().height) + "x" + std::to_string(model.spec().width));
  }
  return evaluate(model_predictor(model), dataset, context, horizon, detection, matching);
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write report '" + path.string() + "'");
  out << "frame_index,mse_mean,mse_se,cd_mean,cd_se,n_sequences\n";
  for (int i = 0; i < report.horizon; ++i) {
    out << (i + 1) << ',' << fmt(report.mse_mean[i]) << ',' << fmt(report.mse_se[i]) << ',';
    if (report.cd_available[i]) {
      out << fmt(report.cd_mean[i]) << ',' << fmt(report.cd_se[i]);
    } else {
      out << "n.a.,n.a.";
    }
    out << ',' << report.n_sequences << '\n';
  }
}

CurveSet read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line.rfind("frame_index,mse_mean,mse_se,cd_mean,cd_se", 0) != 0) {
    throw DataError("'" + path.string() + "' is not an evaluation report CSV");
  }
  CurveSet curves;
  curves.name = path.stem().string();
  auto number = [&](const std::string& cell) {
    if (cell == "n.a.") return std::numeric_limits<double>::quiet_NaN();
    try {
      return std::stod(cell);
    } catch (const std::exception&) {
      throw DataError("malformed number '" + cell + "' in '" + path.string() + "'");
    }
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5) throw DataError("short row in '" + path.string() + "'");
    curves.frame_index.push_back(static_cast<int>(number(cells[0])));
    curves.mse_mean.push_back(number(cells[1]));
    curves.mse_se.push_back(number(cells[2]));
    curves.cd_mean.push_back(number(cells[3]));
    curves.cd_se.push_back(number(cells[4]));
  }
  return curves;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write image '" + path.string() + "'");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

HiddenGrid dump_hidden_states(const models::Model<float>& model,
                              const raster::VideoSequence& sequence, int context, int layer) {
  const auto& spec = model.spec();
  if (!spec.convolutional()) {
    throw ConfigError("unsupported architecture: hidden-state dumps need a convolutional model, got " +
                      models::to_string(spec.arch));
  }
  if (layer < 0 || layer >= spec.n_layers()) {
    throw ConfigError("layer index " + std::to_string(layer) + " out of range [0, " +
                      std::to_string(spec.n_layers()) + ")");
  }
  if (context < 1 || context > sequence.n_frames) throw ConfigError("context out of range");
  if (sequence.height != spec.height || sequence.width != spec.width) {
    throw DataError("sequence frame size does not match the checkpoint");
  }

  ag::Tape<float> tape;
  const auto bound = models::bind_const(tape, model);
  std::vector<ag::Var<float>> frames;
  for (int i = 0; i < context; ++i) {
    frames.push_back(tape.constant(ag::Tensor<float>({1, spec.height, spec.width},
                                                     sequence.normalized<float>(i))));
  }
  const auto state = models::encode<float>(bound, frames);
  const auto h = state[layer].h.values();
  const int channels = spec.channels[layer];
  const int th = spec.height, tw = spec.width;
  const std::size_t plane = static_cast<std::size_t>(th) * tw;

  HiddenGrid out;
  for (int c = 0; c < channels; ++c) {
    const auto first = h.begin() + c * plane;
    const auto [lo, hi] = std::minmax_element(first, first + plane);
    GrayImage tile{th, tw, std::vector<std::uint8_t>(plane, 128)};
    if (*hi > *lo) {
      for (std::size_t i = 0; i < plane; ++i) {
        tile.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (first[i] - *lo) / (*hi - *lo)));
      }
    }
    out.tiles.push_back(std::move(tile));
  }

  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(channels))));
  const int rows = (channels + cols - 1) / cols;
  out.grid.width = cols * tw + (cols + 1);
  out.grid.height = rows * th + (rows + 1);
  out.grid.pixels.assign(static_cast<std::size_t>(out.grid.width) * out.grid.height, 0);
  for (int c = 0; c < channels; ++c) {
    const int r0 = 1 + (c / cols) * (th + 1);
    const int c0 = 1 + (c % cols) * (tw + 1);
    for (int y = 0; y < th; ++y) {
      std::copy_n(out.tiles[c].pixels.begin() + y * tw, tw,
                  out.grid.pixels.begin() + (r0 + y) * out.grid.width + c0);
    }
  }
  return out;
}

}  // namespace bb::eval

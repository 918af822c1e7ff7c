#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bb/sim.hpp"

namespace bb::raster {

/// Grayscale frame, intensities in [0, 1], row-major.
struct Frame {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Frame() = default;
  Frame(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
  std::size_t size() const { return pixels.size(); }
};

inline constexpr int kMinResolution = 8;

/// Super-Gaussian disc per ball, exp(-(d^2/r^2)^4), summed and clamped at 1.
/// Pixel (row, col) samples the box at ((col + 0.5) * box / res, (row + 0.5) * box / res).
Frame render(const sim::WorldState& state, const sim::WorldConfig& config, int resolution);

/// Renders at resolution/2 and upsamples 2x by pixel replication.
Frame render_legacy_upsampled(const sim::WorldState& state, const sim::WorldConfig& config,
                              int resolution);

/// y = 2x - 1. Throws ConfigError on intensities outside [0, 1].
Frame normalize(const Frame& frame);
/// x = (y + 1) / 2. Throws ConfigError on values outside [-1, 1].
Frame denormalize(const Frame& frame);

std::uint8_t quantize(double intensity);
inline double dequantize(std::uint8_t q) { return q / 255.0; }

/// A video with 8-bit pixels; frames are contiguous row-major.
struct VideoSequence {
  int height = 0;
  int width = 0;
  int n_frames = 0;
  std::vector<std::uint8_t> pixels;
  std::optional<std::vector<sim::WorldState>> trajectory;

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }
  std::span<const std::uint8_t> frame_bytes(int index) const {
    return {pixels.data() + frame_size() * index, frame_size()};
  }
  Frame frame(int index) const;
  /// Normalized [-1, 1] view of one frame.
  template <typename T>
  std::vector<T> normalized(int index) const {
    std::vector<T> out(frame_size());
    const auto bytes = frame_bytes(index);
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<T>(2.0 * dequantize(bytes[i]) - 1.0);
    }
    return out;
  }
  void push_frame(const Frame& frame);
};

enum class Split { train, valid, test };
std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct Dataset {
  std::vector<VideoSequence> sequences;
  Split split = Split::train;
  sim::WorldConfig world;
  std::uint64_t master_seed = 0;
  bool legacy_upsample = false;

  int frames_per_seq() const { return sequences.empty() ? 0 : sequences.front().n_frames; }
  int height() const { return sequences.empty() ? 0 : sequences.front().height; }
  int width() const { return sequences.empty() ? 0 : sequences.front().width; }
};

struct GenerateOptions {
  sim::WorldConfig world;
  int n_sequences = 6000;
  int n_frames = 40;
  int resolution = 60;
  bool legacy_upsample = false;
  Split split = Split::train;
};

/// Sequence i is simulated from seed `options.world.seed + i`; sequences are
/// generated in parallel and the result does not depend on the thread count.
Dataset generate(const GenerateOptions& options);

// BBV1 container. Errors are DataError with messages starting
// "bad magic", "truncated payload", "dimension mismatch".
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// Path of the JSON metadata twin written next to a dataset file.
std::filesystem::path metadata_path(const std::filesystem::path& path);

}  // namespace bb::raster

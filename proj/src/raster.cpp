#include "bb/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "bb/error.hpp"

namespace bb::raster {

namespace {

// Beyond two radii a ball contributes less than exp(-256).
constexpr double kSupportRadii = 2.0;

}  // namespace

Frame render(const sim::WorldState& state, const sim::WorldConfig& config, int resolution) {
  if (resolution < kMinResolution) {
    throw ConfigError("resolution must be >= " + std::to_string(kMinResolution));
  }
  Frame frame(resolution, resolution, 0.0);
  const double scale = config.box_side / resolution;
  const double r2 = config.radius * config.radius;
  const double support = kSupportRadii * config.radius;
  for (const sim::Vec2& c : state.positions) {
    const int col0 = std::max(0, static_cast<int>(std::floor((c.x - support) / scale)));
    const int col1 = std::min(resolution - 1, static_cast<int>(std::ceil((c.x + support) / scale)));
    const int row0 = std::max(0, static_cast<int>(std::floor((c.y - support) / scale)));
    const int row1 = std::min(resolution - 1, static_cast<int>(std::ceil((c.y + support) / scale)));
    for (int row = row0; row <= row1; ++row) {
      const double dy = (row + 0.5) * scale - c.y;
      for (int col = col0; col <= col1; ++col) {
        const double dx = (col + 0.5) * scale - c.x;
        const double q = (dx * dx + dy * dy) / r2;
        const double q2 = q * q;
        frame.at(row, col) += std::exp(-(q2 * q2));
      }
    }
  }
  for (double& p : frame.pixels) p = std::min(1.0, p);
  return frame;
}

Frame render_legacy_upsampled(const sim::WorldState& state, const sim::WorldConfig& config,
                              int resolution) {
  if (resolution % 2 != 0) throw ConfigError("legacy upsampling needs an even resolution");
  const Frame small = render(state, config, resolution / 2);
  Frame frame(resolution, resolution);
  for (int row = 0; row < resolution; ++row) {
    for (int col = 0; col < resolution; ++col) frame.at(row, col) = small.at(row / 2, col / 2);
  }
  return frame;
}

Frame normalize(const Frame& frame) {
  Frame out = frame;
  for (double& p : out.pixels) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ConfigError("normalize: intensity " + std::to_string(p) + " outside [0, 1]");
    }
    p = 2.0 * p - 1.0;
  }
  return out;
}

Frame denormalize(const Frame& frame) {
  Frame out = frame;
  for (double& p : out.pixels) {
    if (!(p >= -1.0 && p <= 1.0)) {
      throw ConfigError("denormalize: value " + std::to_string(p) + " outside [-1, 1]");
    }
    p = (p + 1.0) / 2.0;
  }
  return out;
}

std::uint8_t quantize(double intensity) {
  const double clamped = std::clamp(intensity, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

Frame VideoSequence::frame(int index) const {
  Frame f(height, width);
  const auto bytes = frame_bytes(index);
  for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = dequantize(bytes[i]);
  return f;
}

void VideoSequence::push_frame(const Frame& frame) {
  if (n_frames == 0) {
    height = frame.height;
    width = frame.width;
  } else if (frame.height != height || frame.width != width) {
    throw ShapeError("frame dimensions differ within a sequence");
  }
  for (double p : frame.pixels) pixels.push_back(quantize(p));
  ++n_frames;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "'");
}

Dataset generate(const GenerateOptions& options) {
  options.world.validate();
  if (options.n_sequences < 0) throw ConfigError("n_sequences must be >= 0");
  if (options.n_frames < 1) throw ConfigError("n_frames must be >= 1");
  if (options.resolution < kMinResolution || options.resolution > 65535) {
    throw ConfigError("resolution out of range");
  }

  Dataset dataset;
  dataset.split = options.split;
  dataset.world = options.world;
  dataset.master_seed = options.world.seed;
  dataset.legacy_upsample = options.legacy_upsample;
  dataset.sequences.resize(options.n_sequences);

  // Exceptions must not escape the parallel region.
  std::string failure;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < options.n_sequences; ++i) {
    try {
      Rng rng(options.world.seed + static_cast<std::uint64_t>(i));
      auto trajectory = sim::simulate(options.world, options.n_frames, rng);
      VideoSequence seq;
      seq.pixels.reserve(static_cast<std::size_t>(options.resolution) * options.resolution *
                         options.n_frames);
      for (const auto& state : trajectory) {
        seq.push_frame(options.legacy_upsample
                           ? render_legacy_upsampled(state, options.world, options.resolution)
                           : render(state, options.world, options.resolution));
      }
      seq.trajectory = std::move(trajectory);
      dataset.sequences[i] = std::move(seq);
    } catch (const std::exception& e) {
#pragma omp critical
      failure = e.what();
    }
  }
  if (!failure.empty()) throw ConfigError(failure);
  return dataset;
}

// ---------------------------------------------------------------------------
// BBV1 serialization

namespace {

constexpr char kMagic[4] = {'B', 'B', 'V', '1'};
constexpr std::uint8_t kFlagSidecar = 0x1;

template <typename U>
void put_le(std::string& buf, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

void put_f64(std::string& buf, double value) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof bits);
  put_le(buf, bits);
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  double get_f64() {
    const auto bits = get<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  void bytes(std::uint8_t* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw DataError("truncated payload: need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ", file has " + std::to_string(data_.size()));
    }
  }

  std::string data_;
  std::size_t pos_ = 0;
};

nlohmann::json metadata_json(const Dataset& d) {
  return {
      {"format", "BBV1"},
      {"split", to_string(d.split)},
      {"master_seed", d.master_seed},
      {"n_sequences", d.sequences.size()},
      {"frames_per_seq", d.frames_per_seq()},
      {"height", d.height()},
      {"width", d.width()},
      {"legacy_upsample", d.legacy_upsample},
      {"world",
       {{"box_side", d.world.box_side},
        {"n_balls", d.world.n_balls},
        {"radius", d.world.radius},
        {"speed", d.world.speed},
        {"seed", d.world.seed}}},
  };
}

}  // namespace

std::filesystem::path metadata_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  const int frames = dataset.frames_per_seq();
  const int height = dataset.height();
  const int width = dataset.width();
  bool sidecar = !dataset.sequences.empty();
  for (const auto& seq : dataset.sequences) {
    if (seq.n_frames != frames || seq.height != height || seq.width != width) {
      throw ShapeError("write_dataset: sequences differ in shape");
    }
    if (seq.pixels.size() != seq.frame_size() * seq.n_frames) {
      throw ShapeError("write_dataset: pixel buffer does not match frame count");
    }
    if (!seq.trajectory) sidecar = false;
  }

  std::string buf(kMagic, kMagic + 4);
  put_le(buf, static_cast<std::uint32_t>(dataset.sequences.size()));
  put_le(buf, static_cast<std::uint32_t>(frames));
  put_le(buf, static_cast<std::uint16_t>(height));
  put_le(buf, static_cast<std::uint16_t>(width));
  put_le(buf, static_cast<std::uint8_t>(sidecar ? kFlagSidecar : 0));
  for (const auto& seq : dataset.sequences) {
    buf.append(reinterpret_cast<const char*>(seq.pixels.data()), seq.pixels.size());
    if (!sidecar) continue;
    const auto& traj = *seq.trajectory;
    if (static_cast<int>(traj.size()) != frames) {
      throw ShapeError("write_dataset: sidecar length differs from frame count");
    }
    const int n_balls = traj.front().n_balls();
    put_le(buf, static_cast<std::uint16_t>(n_balls));
    for (const auto& state : traj) {
      if (state.n_balls() != n_balls) throw ShapeError("write_dataset: ball count changes");
      for (int b = 0; b < n_balls; ++b) {
        put_f64(buf, state.positions[b].x);
        put_f64(buf, state.positions[b].y);
        put_f64(buf, state.velocities[b].x);
        put_f64(buf, state.velocities[b].y);
      }
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");

  std::ofstream meta(metadata_path(path), std::ios::trunc);
  if (!meta) throw DataError("cannot write metadata for '" + path.string() + "'");
  meta << metadata_json(dataset).dump(2) << "\n";
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) {
    throw DataError("bad magic: '" + path.string() + "' is not a BBV1 dataset");
  }
  Reader reader(data.substr(4));
  const auto n_seq = reader.get<std::uint32_t>();
  const auto frames = reader.get<std::uint32_t>();
  const auto height = reader.get<std::uint16_t>();
  const auto width = reader.get<std::uint16_t>();
  const auto flags = reader.get<std::uint8_t>();
  if (n_seq > 0 && (frames == 0 || height == 0 || width == 0)) {
    throw DataError("dimension mismatch: header declares zero-sized frames");
  }

  Dataset dataset;
  const auto meta_file = metadata_path(path);
  if (std::filesystem::exists(meta_file)) {
    std::ifstream mf(meta_file);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(mf);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("unreadable metadata '" + meta_file.string() + "': " + e.what());
    }
    if (meta.value("height", 0) != height || meta.value("width", 0) != width ||
        meta.value("frames_per_seq", 0) != static_cast<int>(frames) ||
        meta.value("n_sequences", std::size_t{0}) != n_seq) {
      throw DataError("dimension mismatch: metadata twin disagrees with '" + path.string() + "'");
    }
    dataset.split = split_from_string(meta.value("split", std::string("train")));
    dataset.master_seed = meta.value("master_seed", std::uint64_t{0});
    dataset.legacy_upsample = meta.value("legacy_upsample", false);
    if (meta.contains("world")) {
      const auto& w = meta["world"];
      dataset.world.box_side = w.value("box_side", dataset.world.box_side);
      dataset.world.n_balls = w.value("n_balls", dataset.world.n_balls);
      dataset.world.radius = w.value("radius", dataset.world.radius);
      dataset.world.speed = w.value("speed", dataset.world.speed);
      dataset.world.seed = w.value("seed", dataset.world.seed);
    }
  }

  const std::size_t frame_size = static_cast<std::size_t>(height) * width;
  dataset.sequences.reserve(n_seq);
  for (std::uint32_t s = 0; s < n_seq; ++s) {
    VideoSequence seq;
    seq.height = height;
    seq.width = width;
    seq.n_frames = static_cast<int>(frames);
    seq.pixels.resize(frame_size * frames);
    reader.bytes(seq.pixels.data(), seq.pixels.size());
    if (flags & kFlagSidecar) {
      const auto n_balls = reader.get<std::uint16_t>();
      std::vector<sim::WorldState> traj(frames);
      for (auto& state : traj) {
        state.positions.resize(n_balls);
        state.velocities.resize(n_balls);
        for (int b = 0; b < n_balls; ++b) {
          state.positions[b].x = reader.get_f64();
          state.positions[b].y = reader.get_f64();
          state.velocities[b].x = reader.get_f64();
          state.velocities[b].y = reader.get_f64();
        }
      }
      seq.trajectory = std::move(traj);
    }
    dataset.sequences.push_back(std::move(seq));
  }
  if (reader.remaining() != 0) {
    throw DataError("dimension mismatch: " + std::to_string(reader.remaining()) +
                    " trailing bytes after declared payload");
  }
  return dataset;
}

}  // namespace bb::raster

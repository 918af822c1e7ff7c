#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "bb/checkpoint.hpp"
#include "bb/error.hpp"

using namespace bb;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("bb_ckpt_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

models::ModelSpec small_spec(models::Architecture arch) {
  auto s = models::best_spec(arch, 12);
  if (s.convolutional()) {
    s.kernels = {3, 3};
    s.channels = {4, 1};
  } else {
    s.hidden_units = {20, s.frame_size()};
  }
  return s;
}

}  // namespace

TEST(Checkpoint, RoundTripEveryArchitectureBitwise) {
  const auto dir = temp_dir("rt");
  for (auto arch : {models::Architecture::lstm, models::Architecture::convlstm,
                    models::Architecture::seq2seq, models::Architecture::seq2seq_multi}) {
    models::Model<float> m(small_spec(arch));
    Rng rng(5);
    m.init_params(rng);
    const auto path = dir / (models::to_string(arch) + ".json");
    checkpoint::save(m, path, {{"note", "x"}});
    const auto back = checkpoint::load<float>(path);
    EXPECT_EQ(back.stored_dtype, "f32");
    EXPECT_EQ(back.metadata["note"], "x");
    EXPECT_EQ(back.model.spec().arch, arch);
    ASSERT_EQ(back.model.params().size(), m.params().size());
    for (std::size_t p = 0; p < m.params().size(); ++p) {
      EXPECT_EQ(back.model.params().name(p), m.params().name(p));
      EXPECT_EQ(back.model.params().tensor(p).values, m.params().tensor(p).values);
    }
  }
  fs::remove_all(dir);
}

TEST(Checkpoint, DoubleStoredLoadsAsFloat) {
  const auto dir = temp_dir("f64");
  models::Model<double> m(small_spec(models::Architecture::convlstm));
  Rng rng(6);
  m.init_params(rng);
  checkpoint::save(m, dir / "m.json");
  const auto back = checkpoint::load<float>(dir / "m.json");
  EXPECT_EQ(back.stored_dtype, "f64");
  for (std::size_t p = 0; p < m.params().size(); ++p) {
    for (std::size_t i = 0; i < m.params().tensor(p).size(); ++i) {
      EXPECT_EQ(back.model.params().tensor(p).values[i], static_cast<float>(m.params().tensor(p).values[i]));
    }
  }
  fs::remove_all(dir);
}

TEST(Checkpoint, Errors) {
  const auto dir = temp_dir("err");
  EXPECT_THROW(checkpoint::load<float>(dir / "missing.json"), DataError);

  models::Model<float> m(small_spec(models::Architecture::convlstm));
  checkpoint::save(m, dir / "m.json");
  // Truncated blob.
  const auto blob = checkpoint::blob_path(dir / "m.json");
  fs::resize_file(blob, fs::file_size(blob) - 4);
  try {
    checkpoint::load<float>(dir / "m.json");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos) << e.what();
  }
  // Trailing bytes.
  checkpoint::save(m, dir / "m.json");
  {
    std::ofstream out(blob, std::ios::app | std::ios::binary);
    out << "xxxx";
  }
  EXPECT_THROW(checkpoint::load<float>(dir / "m.json"), DataError);
  // Not JSON.
  {
    std::ofstream out(dir / "bad.json");
    out << "{nope";
  }
  EXPECT_THROW(checkpoint::load<float>(dir / "bad.json"), DataError);
  fs::remove_all(dir);
}

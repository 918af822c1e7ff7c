#include "bb/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "bb/error.hpp"

namespace bb::checkpoint {

namespace {

constexpr const char* kFormat = "bb-checkpoint-1";

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename T>
void append_le(std::string& buf, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <typename T>
T read_le(const char* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

template <typename Stored, typename T>
void decode_into(const std::string& blob, std::size_t offset, std::vector<T>& out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(read_le<Stored>(blob.data() + offset + i * sizeof(Stored)));
  }
}

}  // namespace

std::filesystem::path blob_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".bin");
}

template <typename T>
void save(const models::Model<T>& model, const std::filesystem::path& path,
          const nlohmann::json& metadata) {
  nlohmann::json manifest{{"format", kFormat},
                          {"dtype", dtype_name<T>()},
                          {"model", model.spec().to_json()},
                          {"blob", blob_path(path).filename().string()},
                          {"metadata", metadata}};
  std::string blob;
  blob.reserve(model.params().n_values() * sizeof(T));
  auto& tensors = manifest["tensors"] = nlohmann::json::array();
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    const auto& t = model.params().tensor(p);
    tensors.push_back({{"name", model.params().name(p)},
                       {"shape", t.shape},
                       {"offset", blob.size()},
                       {"count", t.values.size()}});
    for (T v : t.values) append_le(blob, v);
  }

  std::ofstream bin(blob_path(path), std::ios::binary | std::ios::trunc);
  if (!bin) throw DataError("cannot write checkpoint blob '" + blob_path(path).string() + "'");
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream json(path, std::ios::trunc);
  if (!json) throw DataError("cannot write checkpoint '" + path.string() + "'");
  json << manifest.dump(2) << "\n";
  if (!bin || !json) throw DataError("checkpoint write failed for '" + path.string() + "'");
}

template <typename T>
Loaded<T> load(const std::filesystem::path& path) {
  std::ifstream json(path);
  if (!json) throw DataError("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (manifest.value("format", "") != kFormat) {
    throw DataError("'" + path.string() + "' is not a checkpoint manifest");
  }
  const std::string dtype = manifest.value("dtype", "");
  if (dtype != "f32" && dtype != "f64") throw DataError("unsupported checkpoint dtype '" + dtype + "'");
  const std::size_t width = dtype == "f32" ? 4 : 8;

  models::ModelSpec spec;
  try {
    spec = models::ModelSpec::from_json(manifest.at("model"));
  } catch (const std::exception& e) {
    throw DataError("checkpoint '" + path.string() + "': " + e.what());
  }

  const auto blob_file = path.parent_path() / manifest.value("blob", blob_path(path).filename().string());
  std::ifstream bin(blob_file, std::ios::binary);
  if (!bin) throw DataError("cannot open checkpoint blob '" + blob_file.string() + "'");
  const std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  Loaded<T> loaded{models::Model<T>(spec), manifest.value("metadata", nlohmann::json::object()),
                   dtype};
  auto& params = loaded.model.params();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size()) {
    throw DataError("checkpoint lists " + std::to_string(tensors.size()) +
                    " tensors but the model spec implies " + std::to_string(params.size()));
  }
  std::size_t expected_bytes = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& entry = tensors[p];
    auto& t = params.tensor(p);
    if (entry.at("name").get<std::string>() != params.name(p) ||
        entry.at("shape").get<ag::Shape>() != t.shape) {
      throw DataError("checkpoint tensor " + std::to_string(p) + " ('" +
                      entry.at("name").get<std::string>() + "') does not match the model spec");
    }
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    if (offset + t.size() * width > blob.size()) {
      throw DataError("checkpoint blob truncated at tensor '" + params.name(p) + "'");
    }
    if (width == 4) {
      decode_into<float>(blob, offset, t.values);
    } else {
      decode_into<double>(blob, offset, t.values);
    }
    expected_bytes += t.size() * width;
  }
  if (expected_bytes != blob.size()) {
    throw DataError("checkpoint blob has " + std::to_string(blob.size()) + " bytes, expected " +
                    std::to_string(expected_bytes));
  }
  return loaded;
}

template void save(const models::Model<float>&, const std::filesystem::path&, const nlohmann::json&);
template void save(const models::Model<double>&, const std::filesystem::path&, const nlohmann::json&);
template Loaded<float> load(const std::filesystem::path&);
template Loaded<double> load(const std::filesystem::path&);

}  // namespace bb::checkpoint

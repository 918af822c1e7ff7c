#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "bb/models.hpp"

namespace bb::checkpoint {

// A checkpoint is a JSON manifest at `path` (names, shapes, dtype, model
// spec, free-form metadata) and a blob at `path + ".bin"` holding each
// tensor's values as little-endian f32 or f64, in manifest order.

template <typename T>
void save(const models::Model<T>& model, const std::filesystem::path& path,
          const nlohmann::json& metadata = nlohmann::json::object());

template <typename T>
struct Loaded {
  models::Model<T> model;
  nlohmann::json metadata;
  std::string stored_dtype;
};

/// Loads and converts to precision T. Throws DataError on missing files,
/// malformed manifests or blob size mismatches.
template <typename T>
Loaded<T> load(const std::filesystem::path& path);

std::filesystem::path blob_path(const std::filesystem::path& path);

}  // namespace bb::checkpoint

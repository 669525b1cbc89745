#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "afdgcn/config.hpp"
#include "afdgcn/model.hpp"
#include "afdgcn/tensor.hpp"

namespace afdgcn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Blob {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointData {
  RunConfig config;
  /// Manifest entries outside the config (stored with a "meta." prefix).
  std::map<std::string, std::string> meta;
  std::vector<Blob> blobs;

  const Blob* find(const std::string& name) const;
};

/// Blob name of the stored pre-defined adjacency.
inline constexpr const char* kAdjacencyBlob = "buffer.predefined_adjacency";

CheckpointData snapshot(const Model& model, const RunConfig& config, std::map<std::string, std::string> meta = {});

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
/// Throws DataError for bad magic, truncation or an unsupported version.
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Copies every parameter blob into `model`. Throws ShapeError naming the
/// parameter when a stored shape differs, DataError when one is missing.
void apply_checkpoint(const CheckpointData& data, Model& model);

/// Builds the model described by the manifest and loads its parameters.
Model restore_model(const CheckpointData& data);

}  // namespace afdgcn

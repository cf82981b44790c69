#pragma once

// Checkpoints are a JSON manifest (kind, config, tensor table, blob hash)
// next to a blob of little-endian float32 values in table order.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "varlab/numerics/nn.hpp"

namespace varlab {

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string kind;  // "vqvae", "var" or "ar"
  nlohmann::json config;
  nlohmann::json extra;  // free-form run information
  std::vector<CheckpointTensor> tensors;
};

// Writes path (manifest) and path with extension ".bin".
void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& config,
                     const nn::ParameterList& params, const nlohmann::json& extra = nlohmann::json::object());

// Throws DataError when a file is missing, the blob hash or size is off, or
// the manifest is malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies values into params by name. Names and shapes must match exactly.
void restore_parameters(const Checkpoint& ckpt, const nn::ParameterList& params);

}  // namespace varlab

#pragma once

#include "ktb/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace ktb {

// On-disk layout: <dir>/checkpoint.json plus one <tensor-name>.f32 file per
// tensor holding rows*cols little-endian float32 values in row-major order.
// The manifest lists every tensor with its shape and carries any extra
// metadata supplied by the owning model.
void save_checkpoint(const std::filesystem::path& dir, const TensorSet& tensors,
                     const nlohmann::json& metadata);

struct LoadedCheckpoint {
  TensorSet tensors;
  nlohmann::json metadata;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// Copies loaded tensors into a set with matching names and shapes.
void assign_tensors(TensorSet& target, const TensorSet& source);

}  // namespace ktb

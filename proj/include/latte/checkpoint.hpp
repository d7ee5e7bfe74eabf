#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latte/tensor.hpp"

namespace latte {

// Directory checkpoint: manifest.json plus one raw little-endian float32 file
// per named array.
struct CheckpointData {
  nlohmann::json manifest;
  std::map<std::string, Tensor> arrays;
};

void save_checkpoint(const std::string& dir, nlohmann::json manifest,
                     const std::vector<std::pair<std::string, Tensor>>& arrays);

CheckpointData load_checkpoint(const std::string& dir);

// Copies checkpoint arrays into same-named destination tensors; every
// destination must be present with a matching shape.
void restore_arrays(const CheckpointData& ckpt,
                    const std::vector<std::pair<std::string, Tensor>>& dst);

}  // namespace latte

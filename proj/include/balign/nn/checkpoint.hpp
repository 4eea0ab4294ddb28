#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "balign/nn/tensor.hpp"

namespace balign::nn {

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;  // stored as float32
};

/// File layout: "BALIGNCK", uint64 LE header length, JSON header
/// {"format_version", "config", "tensors": [{name, shape, offset, count}]},
/// then the float32 LE payload.
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor& find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws std::runtime_error on a missing file, bad magic or truncated payload.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace balign::nn

#pragma once

// Checkpoint container: a JSON manifest (name, shape, dtype, byte offset per
// tensor, plus free-form metadata) next to a flat little-endian float32 blob.
// `save("run/epoch_3")` writes run/epoch_3.json and run/epoch_3.bin.

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace dudrive {

class Checkpoint {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void add(const std::string& name, const torch::Tensor& tensor);
  bool has(const std::string& name) const;
  /// Throws CheckpointError when the name is missing.
  const torch::Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, torch::Tensor>>& tensors() const { return tensors_; }

  /// Stores every named parameter of the module under prefix + name.
  void add_module(const std::string& prefix, const torch::nn::Module& module);
  /// Copies tensors back into the module, checking every name and shape.
  /// Throws CheckpointError on a missing tensor or shape mismatch.
  void load_module(const std::string& prefix, torch::nn::Module& module) const;

  void save(const std::filesystem::path& stem) const;
  static Checkpoint load(const std::filesystem::path& stem);
  static bool exists(const std::filesystem::path& stem);

 private:
  std::vector<std::pair<std::string, torch::Tensor>> tensors_;
};

}  // namespace dudrive

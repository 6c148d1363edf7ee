#pragma once

// Experiment configuration: a YAML file with four sections (data, model,
// train, eval) plus the per-preset `experiment` section. Unknown keys are
// rejected so that a stored config always describes the run exactly.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dudrive/geometry.hpp"
#include "dudrive/training.hpp"

namespace dudrive {

struct DataSection {
  std::filesystem::path root = "data";  // one sub-directory per domain, each with train/ and test/
  std::vector<std::string> virtual_styles{"virtual_torcs", "virtual_carla"};
  std::string virtual_style = "virtual_torcs";  // the one used by runs
  std::vector<std::string> real_domains{"real_a", "real_b"};
  int train_frames = 2000;
  int test_frames = 400;
  int virtual_frames = 2000;
  std::uint64_t seed = 0;  // scene seeds and the validation split
  double filter_deg = kDefaultFilterDeg;
  VehicleGeometry geometry;
};

struct EvalSection {
  std::filesystem::path output_dir = "runs";
  int variance_samples = 50;
  int grid_frames = 6;
};

struct ExperimentSection {
  std::string domain = "real_a";         // single-domain presets
  std::string source_domain = "real_a";  // semi_supervised
  std::string target_domain = "real_b";
  std::vector<double> label_fractions{0.2, 0.5, 1.0};
};

struct ExperimentConfig {
  DataSection data;
  TrainConfig train;  // includes the model section (arch, seed)
  EvalSection eval;
  ExperimentSection experiment;

  /// Throws ConfigError for out-of-range values.
  void validate() const;
};

/// Parses YAML text. Missing keys keep their defaults; unknown keys and
/// malformed values throw ConfigError naming the offending key.
ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every field, fully resolved; parse_config(to_yaml(c)) reproduces c exactly.
std::string to_yaml(const ExperimentConfig& cfg);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

}  // namespace dudrive

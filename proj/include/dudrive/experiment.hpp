#pragma once

// Command implementations behind the CLI: dataset synthesis, the experiment
// presets and the cross-run report.
//
// Run directory layout:
//   config.yaml        effective configuration
//   run_info.json      preset, seed, status
//   eval.csv           experiment,domain,split,mae_deg,sd_deg
//   variance.csv       domain,virtual_style,tv_real,tv_generated,tv_virtual
//   semi.csv           fraction,model,mae_deg,sd_deg           (semi_supervised)
//   metrics_<stage>.csv, checkpoints/<stage>_epoch_<k>.{json,bin}, grids/*.png

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dudrive/config.hpp"

namespace dudrive {

const std::vector<std::string>& preset_names();

/// Writes every virtual style and real domain of the config under data.root,
/// each with train/ and test/ sub-directories. Nothing is written when the
/// config is invalid.
void cmd_synth_data(const ExperimentConfig& cfg);

/// Run directory: `out` when given, otherwise
/// <DUDRIVE_OUT or eval.output_dir>/<preset>_seed<seed>.
std::filesystem::path resolve_run_dir(const ExperimentConfig& cfg, const std::string& preset,
                                      const std::optional<std::filesystem::path>& out);

/// Executes a preset. An existing, unfinished run directory is resumed from
/// its latest checkpoints. Throws TrainingAborted on a non-finite loss,
/// DatasetError for missing data and ConfigError for an unknown preset.
void cmd_run(const ExperimentConfig& cfg, const std::string& preset, const std::filesystem::path& run_dir);

/// Writes table2.csv, table3.csv, table4.csv (when semi-supervised runs are
/// present), entropy.csv, entropy_fit.csv and entropy.png into out_dir.
/// Throws DatasetError for an incomplete run directory.
void cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir);

}  // namespace dudrive

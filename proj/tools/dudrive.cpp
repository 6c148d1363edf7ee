// dudrive: synthesize datasets, run experiment presets, and build reports.
//
//   dudrive synth-data [--config cfg.yaml] [--seed N]
//   dudrive run --preset dudrive_single [--config cfg.yaml] [--seed N] [--out DIR] [--width-factor F]
//   dudrive report RUN_DIR... [--out DIR]

#include <torch/torch.h>

#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "dudrive/config.hpp"
#include "dudrive/errors.hpp"
#include "dudrive/experiment.hpp"

using namespace dudrive;

namespace {

ExperimentConfig resolve_config(const std::string& path, std::optional<std::uint64_t> seed,
                                std::optional<double> width_factor) {
  ExperimentConfig cfg = path.empty() ? parse_config("") : load_config(path);
  if (seed) cfg.train.seed = *seed;
  if (width_factor) cfg.train.arch.width_factor = *width_factor;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Real-to-virtual domain unification for steering prediction"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> width_factor;
  std::string preset;
  std::string out;
  std::vector<std::string> runs;
  int threads = 0;

  auto* synth = app.add_subcommand("synth-data", "write virtual and real datasets under data.root");
  synth->add_option("--config", config_path, "YAML config");
  synth->add_option("--seed", seed, "data seed (overrides data.seed)");

  auto* run = app.add_subcommand("run", "execute an experiment preset");
  run->add_option("--config", config_path, "YAML config");
  run->add_option("--preset", preset, "experiment preset")->required()->check(CLI::IsMember(preset_names()));
  run->add_option("--seed", seed, "model/training seed (overrides model.seed)");
  run->add_option("--out", out, "run directory");
  run->add_option("--width-factor", width_factor, "channel width factor: 1, 0.5, 0.25 or 0.125");
  run->add_option("--threads", threads, "intra-op threads (0 = library default)");

  auto* report = app.add_subcommand("report", "tabulate completed runs");
  report->add_option("runs", runs, "run directories")->required();
  report->add_option("--out", out, "report directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (threads > 0) torch::set_num_threads(threads);
    if (synth->parsed()) {
      auto cfg = resolve_config(config_path, std::nullopt, std::nullopt);
      if (seed) cfg.data.seed = *seed;
      cmd_synth_data(cfg);
    } else if (run->parsed()) {
      const auto cfg = resolve_config(config_path, seed, width_factor);
      const auto dir = resolve_run_dir(cfg, preset, out.empty() ? std::nullopt : std::optional<std::filesystem::path>(out));
      std::cout << "run directory: " << dir.string() << std::endl;
      cmd_run(cfg, preset, dir);
    } else if (report->parsed()) {
      std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
      cmd_report(dirs, out);
    }
  } catch (const TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

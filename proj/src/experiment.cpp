#include "dudrive/experiment.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <sstream>

#include "dudrive/analysis.hpp"
#include "dudrive/errors.hpp"
#include "dudrive/image_io.hpp"
#include "dudrive/synthworld.hpp"
#include "dudrive/unification.hpp"

namespace dudrive {

namespace fs = std::filesystem;

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"pilotnet",      "finetune",        "cgan_naive",     "pilotnet_joint",
                                              "dudrive_single", "dudrive_unified", "semi_supervised"};
  return names;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

// Rows as column-name -> value maps; the first row is the header.
std::vector<std::map<std::string, std::string>> read_table(const fs::path& path) {
  auto raw = read_csv(path);
  if (raw.empty()) throw DatasetError("empty table " + path.string());
  std::vector<std::map<std::string, std::string>> out;
  for (std::size_t r = 1; r < raw.size(); ++r) {
    if (raw[r].size() != raw[0].size()) throw DatasetError("malformed row " + std::to_string(r) + " in " + path.string());
    std::map<std::string, std::string> m;
    for (std::size_t c = 0; c < raw[0].size(); ++c) m[raw[0][c]] = raw[r][c];
    out.push_back(std::move(m));
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------- data

fs::path split_dir(const ExperimentConfig& cfg, const std::string& domain, const std::string& split) {
  return cfg.data.root / domain / split;
}

FrameSet load_split(const ExperimentConfig& cfg, const std::string& domain, const std::string& split) {
  const auto index = split_dir(cfg, domain, split) / "index.csv";
  if (!fs::exists(index)) throw DatasetError("missing dataset " + index.string() + " (run synth-data first)");
  return load_frames(ingest(index, cfg.data.geometry, cfg.data.filter_deg, domain));
}

std::vector<SceneParams> load_scenes(const fs::path& dir) {
  std::vector<SceneParams> scenes;
  const auto path = dir / "scenes.csv";
  if (!fs::exists(path)) return scenes;
  for (const auto& row : read_table(path)) {
    SceneParams s;
    s.curvature = std::stod(row.at("curvature"));
    s.lane_offset = std::stod(row.at("lane_offset"));
    s.seed = std::stoull(row.at("seed"));
    scenes.push_back(s);
  }
  return scenes;
}

struct RealDomain {
  FrameSet train, val, test;
};

RealDomain load_real(const ExperimentConfig& cfg, const std::string& domain) {
  RealDomain d;
  auto full = load_split(cfg, domain, "train");
  if (cfg.train.val_fraction > 0) {
    std::tie(d.train, d.val) = split_holdout(full, cfg.train.val_fraction, cfg.data.seed);
  } else {
    d.train = std::move(full);
  }
  d.test = load_split(cfg, domain, "test");
  return d;
}

// ---------------------------------------------------------------- run state

struct Run {
  ExperimentConfig cfg;
  std::string preset;
  fs::path dir;
  std::string eval_rows;
  std::string variance_rows;
  std::string semi_rows;

  fs::path ckpt(const std::string& stem) const { return dir / "checkpoints" / stem; }

  void add_eval(const std::string& experiment, const std::string& split, const EvalReport& r) {
    eval_rows += experiment + "," + r.domain_id + "," + split + "," + fmt(r.mae_deg) + "," + fmt(r.sd_deg) + "\n";
    std::cout << "  " << experiment << " " << r.domain_id << " " << split << ": MAE " << r.mae_deg << " deg, SD "
              << r.sd_deg << "\n";
  }
  void flush() const {
    write_text(dir / "eval.csv", "experiment,domain,split,mae_deg,sd_deg\n" + eval_rows);
    if (!variance_rows.empty()) {
      write_text(dir / "variance.csv", "domain,virtual_style,tv_real,tv_generated,tv_virtual\n" + variance_rows);
    }
    if (!semi_rows.empty()) write_text(dir / "semi.csv", "fraction,model,mae_deg,sd_deg\n" + semi_rows);
  }
};

// Highest k among checkpoints/<stage>_epoch_<k>, or -1.
int latest_epoch(const Run& run, const std::string& stage) {
  const auto dir = run.dir / "checkpoints";
  if (!fs::exists(dir)) return -1;
  const std::regex re(stage + "_epoch_([0-9]+)\\.json");
  int best = -1;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = e.path().filename().string();
    if (std::regex_match(name, m, re) && Checkpoint::exists(dir / (stage + "_epoch_" + m[1].str()))) {
      best = std::max(best, std::stoi(m[1].str()));
    }
  }
  return best;
}

void write_predictor_metrics(const fs::path& path, const FitLog& log, std::int64_t steps_per_epoch) {
  std::string text = "step,epoch,loss_d,loss_g_adv,loss_task,val_mae_deg\n";
  for (std::size_t i = 0; i < log.step_loss.size(); ++i) {
    const auto epoch = static_cast<std::size_t>(static_cast<std::int64_t>(i) / steps_per_epoch);
    const bool last = (static_cast<std::int64_t>(i) + 1) % steps_per_epoch == 0;
    text += std::to_string(i) + "," + std::to_string(epoch) + ",,," + fmt(log.step_loss[i]) + ",";
    if (last && epoch < log.epoch_val_mae_deg.size()) text += fmt(log.epoch_val_mae_deg[epoch]);
    text += "\n";
  }
  write_text(path, text);
}

// Predictor fitting with a checkpoint after every epoch; resumes from the latest one.
Predictor predictor_stage(const Run& run, const std::string& stage, Predictor init,
                          std::vector<TrainingSource> sources, const FitOptions& opts,
                          const FrameSet* validation = nullptr) {
  PredictorTrainer trainer(std::move(init), std::move(sources), opts, validation);
  const int last = latest_epoch(run, stage);
  if (last >= 0) {
    trainer.restore(Checkpoint::load(run.ckpt(stage + "_epoch_" + std::to_string(last))));
    std::cout << "[" << stage << "] resumed after epoch " << last << "\n";
  }
  trainer.run([&](const PredictorTrainer& t) {
    t.snapshot().save(run.ckpt(stage + "_epoch_" + std::to_string(t.epoch())));
    write_predictor_metrics(run.dir / ("metrics_" + stage + ".csv"), t.log(), t.steps_per_epoch());
    std::cout << "[" << stage << "] epoch " << t.epoch() << "/" << opts.epochs << " loss "
              << (t.log().step_loss.empty() ? 0.0 : t.log().step_loss.back());
    if (!t.log().epoch_val_mae_deg.empty()) std::cout << " val MAE " << t.log().epoch_val_mae_deg.back();
    std::cout << std::endl;
  });
  return trainer.predictor();
}

Predictor pretrain_stage(const Run& run, const FrameSet& virtual_train) {
  const auto& cfg = run.cfg.train;
  FitOptions o = predictor_fit_options(cfg);
  o.lr = cfg.pretrain.lr;
  o.batch_size = cfg.pretrain.batch_size;
  o.epochs = cfg.pretrain.epochs;
  o.seed = mix_seed(cfg.seed, hash_name("pretrain"));
  return predictor_stage(run, "pretrain_" + virtual_train.domain_id, make_predictor(cfg.arch, cfg.seed),
                         {TrainingSource{&virtual_train, cfg.augment_virtual}}, o);
}

Predictor direct_stage(const Run& run, const std::string& stage, const std::vector<const FrameSet*>& sets,
                       const Predictor* init, const FrameSet* validation) {
  const auto& cfg = run.cfg.train;
  std::vector<TrainingSource> sources;
  for (const auto* s : sets) sources.push_back({s, cfg.augment_real});
  FitOptions o = predictor_fit_options(cfg);
  o.seed = mix_seed(cfg.seed, hash_name("direct_predictor"));
  return predictor_stage(run, stage, init != nullptr ? clone(*init) : make_predictor(cfg.arch, cfg.seed),
                         std::move(sources), o, validation);
}

// Joint training with per-epoch full-state checkpoints and a best-validation snapshot.
DomainRun dudrive_stage(const Run& run, const std::string& stage, const FrameSet& real_train,
                        const FrameSet& virtual_train, const FrameSet* real_val, const Predictor& pretrained,
                        const TrainConfig& cfg, DuDriveOptions opts = {}) {
  DuDriveTrainer trainer(real_train, virtual_train, real_val, make_generator(cfg.arch, cfg.seed), clone(pretrained),
                         make_discriminator(cfg.arch, cfg.seed), cfg, opts);
  const int last = latest_epoch(run, stage);
  if (last >= 0) {
    trainer.restore(Checkpoint::load(run.ckpt(stage + "_epoch_" + std::to_string(last))));
    std::cout << "[" << stage << "] resumed after epoch " << last << "\n";
  }
  trainer.run([&](const DuDriveTrainer& t) {
    t.snapshot().save(run.ckpt(stage + "_epoch_" + std::to_string(t.epoch())));
    write_metrics_csv(run.dir / ("metrics_" + stage + ".csv"), t.metrics());
    const auto& m = t.metrics().back();
    std::cout << "[" << stage << "] epoch " << t.epoch() << "/" << cfg.epochs << " loss_d " << m.loss_d
              << " loss_g_adv " << m.loss_g_adv << " loss_task " << m.loss_task;
    if (m.val_mae_deg) {
      std::cout << " val MAE " << *m.val_mae_deg;
      const auto best_stem = run.ckpt(stage + "_best");
      const bool better = !Checkpoint::exists(best_stem) ||
                          *m.val_mae_deg < Checkpoint::load(best_stem).meta.at("val_mae_deg").get<double>();
      if (better) {
        auto& mt = const_cast<DuDriveTrainer&>(t);
        Checkpoint best;
        best.add_module("G/", *mt.generator());
        best.add_module("P/", *mt.predictor());
        best.add_module("D/", *mt.discriminator());
        best.meta["epoch"] = t.epoch();
        best.meta["val_mae_deg"] = *m.val_mae_deg;
        best.save(best_stem);
      }
    }
    std::cout << std::endl;
  });
  nlohmann::json provenance = {{"real_domain", real_train.domain_id},
                               {"virtual_domain", virtual_train.domain_id},
                               {"real_frames", real_train.size()},
                               {"dataset_root", run.cfg.data.root.string()},
                               {"seed", cfg.seed},
                               {"epochs", cfg.epochs},
                               {"lambda_task", cfg.lambda_task},
                               {"update_predictor", opts.update_predictor},
                               {"run_dir", run.dir.string()},
                               {"stage", stage}};
  DomainRun out{DomainBundle(real_train.domain_id, real_train.geometry, trainer.generator(), provenance),
                trainer.predictor(), trainer.metrics()};
  out.bundle.dataset.root = split_dir(run.cfg, real_train.domain_id, "train");
  out.bundle.dataset.domain_id = real_train.domain_id;
  out.bundle.dataset.geometry = real_train.geometry;
  out.bundle.freeze();
  out.bundle.save(run.ckpt(stage + "_bundle"));
  return out;
}

Predictor global_stage(const Run& run, const std::string& stage, const std::vector<DomainData>& domains,
                       const Predictor& init) {
  const auto plan = plan_global_predictor(domains, run.cfg.train);
  return predictor_stage(run, stage, clone(init), plan.sources(), plan.options);
}

// real | generated | true-virtual rows for the first frames of the test set.
void write_comparison_grid(const Run& run, const std::string& name, const FrameSet& real, Generator* g,
                           const std::string& domain) {
  const auto n = std::min<std::int64_t>(run.cfg.eval.grid_frames, static_cast<std::int64_t>(real.size()));
  std::vector<std::vector<torch::Tensor>> rows(1);
  for (std::int64_t i = 0; i < n; ++i) rows[0].push_back(real.images[i]);
  if (g != nullptr) {
    torch::NoGradGuard guard;
    auto gen = (*g)->forward(real.images.slice(0, 0, n)).to(torch::kFloat32);
    rows.emplace_back();
    for (std::int64_t i = 0; i < n; ++i) rows.back().push_back(gen[i]);
  }
  const auto scenes = load_scenes(split_dir(run.cfg, domain, "test"));
  const auto vstyle = style_by_id(run.cfg.data.virtual_style);
  if (static_cast<std::int64_t>(scenes.size()) >= n && is_virtual(vstyle)) {
    rows.emplace_back();
    for (std::int64_t i = 0; i < n; ++i) rows.back().push_back(render(scenes[static_cast<std::size_t>(i)], vstyle));
  }
  write_grid(run.dir / "grids" / (name + ".png"), rows);
}

void record_variance(Run& run, const FrameSet& real_test, Generator& g, const FrameSet& virtual_test) {
  const int n = run.cfg.eval.variance_samples;
  const auto seed = mix_seed(run.cfg.train.seed, hash_name("variance"));
  const auto generated = map_through_generator(g, real_test);
  const double tv_real = total_variance(real_test.images, n, seed);
  const double tv_gen = total_variance(generated.images, n, seed);
  const double tv_virt = total_variance(virtual_test.images, n, seed);
  run.variance_rows += real_test.domain_id + "," + virtual_test.domain_id + "," + fmt(tv_real) + "," + fmt(tv_gen) +
                       "," + fmt(tv_virt) + "\n";
  std::cout << "  total variance " << real_test.domain_id << ": real " << tv_real << ", generated " << tv_gen
            << ", virtual " << tv_virt << "\n";
}

std::string fraction_str(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", f);
  return buf;
}

std::string fraction_tag(double f) { return std::to_string(static_cast<int>(std::lround(f * 100))); }

// ---------------------------------------------------------------- presets

void preset_pilotnet(Run& run) {
  const auto d = load_real(run.cfg, run.cfg.experiment.domain);
  auto p = direct_stage(run, "pilotnet", {&d.train}, nullptr, &d.val);
  run.add_eval("pilotnet", "val", evaluate(p, d.val));
  run.add_eval("pilotnet", "test", evaluate(p, d.test));
}

void preset_finetune(Run& run) {
  const auto virt = load_split(run.cfg, run.cfg.data.virtual_style, "train");
  auto pre = pretrain_stage(run, virt);
  const auto d = load_real(run.cfg, run.cfg.experiment.domain);
  auto p = direct_stage(run, "finetune", {&d.train}, &pre, &d.val);
  run.add_eval("finetune", "val", evaluate(p, d.val));
  run.add_eval("finetune", "test", evaluate(p, d.test));
}

void preset_pilotnet_joint(Run& run) {
  std::vector<RealDomain> domains;
  for (const auto& id : run.cfg.data.real_domains) domains.push_back(load_real(run.cfg, id));
  std::vector<const FrameSet*> sets;
  for (const auto& d : domains) sets.push_back(&d.train);
  auto p = direct_stage(run, "pilotnet_joint", sets, nullptr, nullptr);
  for (const auto& d : domains) {
    run.add_eval("pilotnet_joint", "val", evaluate(p, d.val));
    run.add_eval("pilotnet_joint", "test", evaluate(p, d.test));
  }
}

void preset_dudrive_single(Run& run, bool naive) {
  const auto& cfg = run.cfg;
  const auto virt = load_split(cfg, cfg.data.virtual_style, "train");
  const auto virt_test = load_split(cfg, cfg.data.virtual_style, "test");
  auto pre = pretrain_stage(run, virt);
  const auto d = load_real(cfg, cfg.experiment.domain);
  TrainConfig tc = cfg.train;
  DuDriveOptions opts;
  std::string name = "dudrive_single";
  if (naive) {
    tc.lambda_task = 0.0;
    opts.update_predictor = false;
    name = "cgan_naive";
  }
  auto du = dudrive_stage(run, name + "_" + d.train.domain_id, d.train, virt, &d.val, pre, tc, opts);
  auto g = du.bundle.generator();
  Predictor p = du.predictor;
  if (naive) {
    // Predictor trained afterwards on the generated images only.
    const auto mapped = du.bundle.map(cfg.train.augment_real ? with_flips(d.train) : d.train);
    const auto mapped_val = du.bundle.map(d.val);
    FitOptions o = predictor_fit_options(cfg.train);
    o.seed = mix_seed(cfg.train.seed, hash_name("cgan_predictor"));
    p = predictor_stage(run, "cgan_naive_predictor", clone(pre), {TrainingSource{&mapped, false}}, o, &mapped_val);
  }
  run.add_eval(name, "val", evaluate(p, d.val, &g));
  run.add_eval(name, "test", evaluate(p, d.test, &g));
  record_variance(run, d.test, g, virt_test);
  write_comparison_grid(run, name + "_" + d.test.domain_id, d.test, &g, d.test.domain_id);
}

void preset_dudrive_unified(Run& run) {
  const auto& cfg = run.cfg;
  const auto virt = load_split(cfg, cfg.data.virtual_style, "train");
  const auto virt_test = load_split(cfg, cfg.data.virtual_style, "test");
  auto pre = pretrain_stage(run, virt);
  std::vector<RealDomain> domains;
  std::vector<DomainRun> runs;
  for (const auto& id : cfg.data.real_domains) {
    domains.push_back(load_real(cfg, id));
    const auto& d = domains.back();
    runs.push_back(dudrive_stage(run, "dudrive_single_" + id, d.train, virt, &d.val, pre, cfg.train));
    auto g = runs.back().bundle.generator();
    run.add_eval("dudrive_single", "val", evaluate(runs.back().predictor, d.val, &g));
    run.add_eval("dudrive_single", "test", evaluate(runs.back().predictor, d.test, &g));
    record_variance(run, d.test, g, virt_test);
    write_comparison_grid(run, "dudrive_" + id, d.test, &g, id);
  }
  std::vector<DomainData> data;
  for (std::size_t k = 0; k < domains.size(); ++k) data.push_back({&runs[k].bundle, &domains[k].train, &domains[k].val});
  auto global = global_stage(run, "global_predictor", data, pre);
  for (std::size_t k = 0; k < domains.size(); ++k) {
    auto g = runs[k].bundle.generator();
    run.add_eval("dudrive_unified", "val", evaluate(global, domains[k].val, &g));
    run.add_eval("dudrive_unified", "test", evaluate(global, domains[k].test, &g));
  }
}

void preset_semi_supervised(Run& run) {
  const auto& cfg = run.cfg;
  const auto virt = load_split(cfg, cfg.data.virtual_style, "train");
  auto pre = pretrain_stage(run, virt);
  const auto src = load_real(cfg, cfg.experiment.source_domain);
  const auto tgt = load_real(cfg, cfg.experiment.target_domain);
  auto source = dudrive_stage(run, "dudrive_single_" + src.train.domain_id, src.train, virt, &src.val, pre, cfg.train);
  for (double f : cfg.experiment.label_fractions) {
    const auto tag = fraction_tag(f);
    const auto subset = label_subset(tgt.train.size(), f, cfg.train.seed);
    if (subset.empty()) throw DatasetError("labeled subset is empty");
    const auto labeled = tgt.train.subset(subset);
    auto target = dudrive_stage(run, "semi" + tag + "_dudrive", labeled, virt, &tgt.val, pre, cfg.train);
    auto g = target.bundle.generator();
    auto global = global_stage(run, "semi" + tag + "_global",
                               {{&source.bundle, &src.train, nullptr}, {&target.bundle, &labeled, nullptr}}, pre);
    auto direct = direct_stage(run, "semi" + tag + "_pilotnet", {&labeled}, nullptr, nullptr);
    const std::vector<std::pair<std::string, EvalReport>> reports{
        {"pilotnet", evaluate(direct, tgt.test)},
        {"dudrive_single", evaluate(target.predictor, tgt.test, &g)},
        {"dudrive_unified", evaluate(global, tgt.test, &g)}};
    for (const auto& [model, r] : reports) {
      run.add_eval("semi" + tag + "_" + model, "test", r);
      run.semi_rows += fraction_str(f) + "," + model + "," + fmt(r.mae_deg) + "," + fmt(r.sd_deg) + "\n";
    }
  }
}

void write_run_info(const Run& run, const std::string& status) {
  nlohmann::json info = {{"preset", run.preset},
                         {"seed", run.cfg.train.seed},
                         {"virtual_style", run.cfg.data.virtual_style},
                         {"status", status}};
  write_text(run.dir / "run_info.json", info.dump(2) + "\n");
}

}  // namespace

// ---------------------------------------------------------------- commands

void cmd_synth_data(const ExperimentConfig& cfg) {
  cfg.validate();
  for (const auto& id : cfg.data.virtual_styles) {
    if (!is_virtual(style_by_id(id))) throw ConfigError("'" + id + "' is not a virtual style");
  }
  for (const auto& id : cfg.data.real_domains) {
    if (is_virtual(style_by_id(id))) throw ConfigError("'" + id + "' is not a real style");
  }
  auto emit = [&](const std::string& id, int train_n) {
    const auto style = style_by_id(id);
    for (const auto& [split, n] : {std::pair<std::string, int>{"train", train_n}, {"test", cfg.data.test_frames}}) {
      const auto seed = mix_seed(cfg.data.seed, hash_name(id + "/" + split));
      write_dataset(split_dir(cfg, id, split), build_dataset(n, style, cfg.data.geometry, seed));
      std::cout << "wrote " << n << " frames to " << split_dir(cfg, id, split).string() << "\n";
    }
  };
  for (const auto& id : cfg.data.virtual_styles) emit(id, cfg.data.virtual_frames);
  for (const auto& id : cfg.data.real_domains) emit(id, cfg.data.train_frames);
}

fs::path resolve_run_dir(const ExperimentConfig& cfg, const std::string& preset, const std::optional<fs::path>& out) {
  if (out) return *out;
  fs::path base = cfg.eval.output_dir;
  if (const char* env = std::getenv("DUDRIVE_OUT"); env != nullptr && *env != '\0') base = env;
  return base / (preset + "_seed" + std::to_string(cfg.train.seed));
}

void cmd_run(const ExperimentConfig& cfg, const std::string& preset, const fs::path& run_dir) {
  cfg.validate();
  if (std::find(preset_names().begin(), preset_names().end(), preset) == preset_names().end()) {
    throw ConfigError("unknown preset '" + preset + "'");
  }
  Run run{cfg, preset, run_dir, {}, {}, {}};
  fs::create_directories(run.dir / "checkpoints");
  if (fs::exists(run.dir / "config.yaml")) {
    if (to_yaml(load_config(run.dir / "config.yaml")) != to_yaml(cfg)) {
      throw ConfigError("run directory " + run.dir.string() + " holds a run with a different configuration");
    }
  }
  save_config(run.dir / "config.yaml", cfg);
  write_run_info(run, "running");
  try {
    if (preset == "pilotnet") preset_pilotnet(run);
    else if (preset == "finetune") preset_finetune(run);
    else if (preset == "cgan_naive") preset_dudrive_single(run, true);
    else if (preset == "pilotnet_joint") preset_pilotnet_joint(run);
    else if (preset == "dudrive_single") preset_dudrive_single(run, false);
    else if (preset == "dudrive_unified") preset_dudrive_unified(run);
    else preset_semi_supervised(run);
  } catch (const TrainingAborted&) {
    run.flush();
    write_run_info(run, "aborted");
    throw;
  }
  run.flush();
  write_run_info(run, "complete");
}

// ---------------------------------------------------------------- report

namespace {

struct RunRecord {
  std::string name;
  std::string preset;
  std::uint64_t seed = 0;
  std::vector<std::map<std::string, std::string>> eval, variance, semi;
};

RunRecord read_run(const fs::path& dir) {
  const auto info_path = dir / "run_info.json";
  if (!fs::exists(info_path) || !fs::exists(dir / "eval.csv")) {
    throw DatasetError("incomplete run directory " + dir.string());
  }
  std::ifstream in(info_path);
  const auto info = nlohmann::json::parse(in);
  if (info.value("status", "") != "complete") throw DatasetError("incomplete run directory " + dir.string());
  RunRecord r;
  r.name = dir.filename().string();
  if (r.name.empty()) r.name = dir.parent_path().filename().string();
  r.preset = info.at("preset").get<std::string>();
  r.seed = info.at("seed").get<std::uint64_t>();
  r.eval = read_table(dir / "eval.csv");
  if (fs::exists(dir / "variance.csv")) r.variance = read_table(dir / "variance.csv");
  if (fs::exists(dir / "semi.csv")) r.semi = read_table(dir / "semi.csv");
  return r;
}

void plot_scatter(const fs::path& path, const std::vector<std::pair<double, double>>& pts, double slope,
                  double intercept, bool has_fit) {
  const int w = 480, h = 360, margin = 50;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!pts.empty()) {
    x0 = x1 = pts[0].first;
    y0 = y1 = pts[0].second;
    for (const auto& [x, y] : pts) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  const double px = std::max(1e-9, (x1 - x0) * 0.1), py = std::max(1e-9, (y1 - y0) * 0.1);
  x0 -= px;
  x1 += px;
  y0 -= py;
  y1 += py;
  auto to_px = [&](double x, double y) {
    return cv::Point(static_cast<int>(margin + (x - x0) / (x1 - x0) * (w - 2 * margin)),
                     static_cast<int>(h - margin - (y - y0) / (y1 - y0) * (h - 2 * margin)));
  };
  cv::rectangle(img, {margin, margin}, {w - margin, h - margin}, cv::Scalar(0, 0, 0), 1);
  if (has_fit) {
    cv::line(img, to_px(x0, slope * x0 + intercept), to_px(x1, slope * x1 + intercept), cv::Scalar(200, 80, 0), 2,
             cv::LINE_AA);
  }
  for (const auto& [x, y] : pts) cv::circle(img, to_px(x, y), 5, cv::Scalar(0, 0, 200), cv::FILLED, cv::LINE_AA);
  auto label = [&](const std::string& s, cv::Point at) {
    cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  };
  label("% decrease in total variance", {w / 2 - 90, h - 15});
  label("% decrease in MAE", {5, 30});
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", x0);
  label(buf, {margin, h - margin + 15});
  std::snprintf(buf, sizeof buf, "%.3g", x1);
  label(buf, {w - margin - 30, h - margin + 15});
  std::snprintf(buf, sizeof buf, "%.3g", y0);
  label(buf, {5, h - margin});
  std::snprintf(buf, sizeof buf, "%.3g", y1);
  label(buf, {5, margin + 5});
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::imwrite(path.string(), img);
}

}  // namespace

void cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw DatasetError("report needs at least one run directory");
  std::vector<RunRecord> runs;
  for (const auto& d : run_dirs) runs.push_back(read_run(d));

  std::string t2 = "run,experiment,seed,domain,mae_deg,sd_deg\n";
  std::string t3 = "run,seed,domain,virtual_style,tv_real,tv_generated,tv_virtual\n";
  std::string t4 = "run,seed,fraction,model,mae_deg,sd_deg\n";
  bool any_semi = false;
  for (const auto& r : runs) {
    for (const auto& e : r.eval) {
      if (e.at("split") != "test" || e.at("experiment").rfind("semi", 0) == 0) continue;
      t2 += r.name + "," + e.at("experiment") + "," + std::to_string(r.seed) + "," + e.at("domain") + "," +
            e.at("mae_deg") + "," + e.at("sd_deg") + "\n";
    }
    for (const auto& v : r.variance) {
      t3 += r.name + "," + std::to_string(r.seed) + "," + v.at("domain") + "," + v.at("virtual_style") + "," +
            v.at("tv_real") + "," + v.at("tv_generated") + "," + v.at("tv_virtual") + "\n";
    }
    for (const auto& s : r.semi) {
      any_semi = true;
      t4 += r.name + "," + std::to_string(r.seed) + "," + s.at("fraction") + "," + s.at("model") + "," +
            s.at("mae_deg") + "," + s.at("sd_deg") + "\n";
    }
  }
  write_text(out_dir / "table2.csv", t2);
  write_text(out_dir / "table3.csv", t3);
  if (any_semi) write_text(out_dir / "table4.csv", t4);

  // Entropy scatter: one point per (run with a generator, domain), paired with
  // the PilotNet test MAE of the same domain and seed.
  std::map<std::pair<std::string, std::uint64_t>, double> pilotnet_mae;
  for (const auto& r : runs) {
    for (const auto& e : r.eval) {
      if (e.at("experiment") == "pilotnet" && e.at("split") == "test") {
        pilotnet_mae[{e.at("domain"), r.seed}] = std::stod(e.at("mae_deg"));
      }
    }
  }
  std::string ent = "run,seed,domain,virtual_style,pct_variance_decrease,pct_mae_decrease\n";
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : runs) {
    for (const auto& v : r.variance) {
      const auto base = pilotnet_mae.find({v.at("domain"), r.seed});
      if (base == pilotnet_mae.end()) continue;
      const std::string model = r.preset == "cgan_naive" ? "cgan_naive" : "dudrive_single";
      for (const auto& e : r.eval) {
        if (e.at("experiment") != model || e.at("split") != "test" || e.at("domain") != v.at("domain")) continue;
        const double x = percent_decrease(std::stod(v.at("tv_real")), std::stod(v.at("tv_generated")));
        const double y = percent_decrease(base->second, std::stod(e.at("mae_deg")));
        pts.emplace_back(x, y);
        ent += r.name + "," + std::to_string(r.seed) + "," + v.at("domain") + "," + v.at("virtual_style") + "," +
               fmt(x) + "," + fmt(y) + "\n";
      }
    }
  }
  write_text(out_dir / "entropy.csv", ent);
  double slope = 0, intercept = 0, r = 0;
  bool fit = false;
  if (pts.size() >= 2) {
    double mx = 0, my = 0;
    for (const auto& [x, y] : pts) {
      mx += x;
      my += y;
    }
    mx /= static_cast<double>(pts.size());
    my /= static_cast<double>(pts.size());
    double sxx = 0, sxy = 0;
    for (const auto& [x, y] : pts) {
      sxx += (x - mx) * (x - mx);
      sxy += (x - mx) * (y - my);
    }
    if (sxx > 0) {
      fit = true;
      slope = sxy / sxx;
      intercept = my - slope * mx;
      try {
        r = pearson(pts);
      } catch (const InvalidInput&) {
        r = 0;
      }
    }
  }
  write_text(out_dir / "entropy_fit.csv", "n,slope,intercept,pearson_r\n" + std::to_string(pts.size()) + "," +
                                              (fit ? fmt(slope) + "," + fmt(intercept) + "," + fmt(r) : ",,") + "\n");
  plot_scatter(out_dir / "entropy.png", pts, slope, intercept, fit);
}

}  // namespace dudrive

#include "dudrive/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "dudrive/errors.hpp"

namespace dudrive {

namespace {

void check_keys(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError("'" + where + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, const std::string& where, T& out) {
  if (!node || !node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("bad value for '" + where + "." + key + "'");
  }
}

void read_path(const YAML::Node& node, const char* key, const std::string& where, std::filesystem::path& out) {
  std::string s = out.string();
  read(node, key, where, s);
  out = s;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (data.train_frames < 1 || data.test_frames < 1 || data.virtual_frames < 1) {
    throw ConfigError("frame counts must be >= 1");
  }
  if (data.real_domains.empty()) throw ConfigError("data.real_domains must not be empty");
  if (data.virtual_styles.empty()) throw ConfigError("data.virtual_styles must not be empty");
  if (!(data.filter_deg > 0)) throw ConfigError("data.filter_deg must be > 0");
  try {
    data.geometry.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("data.geometry: ") + e.what());
  }
  if (eval.variance_samples < 2) throw ConfigError("eval.variance_samples must be >= 2");
  if (eval.grid_frames < 1) throw ConfigError("eval.grid_frames must be >= 1");
  for (double f : experiment.label_fractions) {
    if (!(f > 0 && f <= 1)) throw ConfigError("experiment.label_fractions must lie in (0, 1]");
  }
  train.validate();
}

ExperimentConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed YAML: ") + e.what());
  }
  ExperimentConfig c;
  if (!root || root.IsNull()) {
    c.validate();
    return c;
  }
  check_keys(root, "", {"data", "model", "train", "eval", "experiment"});

  const auto data = root["data"];
  check_keys(data, "data",
             {"root", "virtual_styles", "virtual_style", "real_domains", "train_frames", "test_frames",
              "virtual_frames", "seed", "filter_deg", "geometry"});
  read_path(data, "root", "data", c.data.root);
  read(data, "virtual_styles", "data", c.data.virtual_styles);
  read(data, "virtual_style", "data", c.data.virtual_style);
  read(data, "real_domains", "data", c.data.real_domains);
  read(data, "train_frames", "data", c.data.train_frames);
  read(data, "test_frames", "data", c.data.test_frames);
  read(data, "virtual_frames", "data", c.data.virtual_frames);
  read(data, "seed", "data", c.data.seed);
  read(data, "filter_deg", "data", c.data.filter_deg);
  if (data) {
    const auto geom = data["geometry"];
    check_keys(geom, "data.geometry", {"wheelbase_m", "steer_ratio", "slip_coeff"});
    read(geom, "wheelbase_m", "data.geometry", c.data.geometry.wheelbase_m);
    read(geom, "steer_ratio", "data.geometry", c.data.geometry.steer_ratio);
    read(geom, "slip_coeff", "data.geometry", c.data.geometry.slip_coeff);
  }

  const auto model = root["model"];
  check_keys(model, "model", {"width_factor", "residual_blocks", "seed"});
  read(model, "width_factor", "model", c.train.arch.width_factor);
  read(model, "residual_blocks", "model", c.train.arch.residual_blocks);
  read(model, "seed", "model", c.train.seed);

  const auto train = root["train"];
  check_keys(train, "train",
             {"lambda_task", "lr_predictor", "lr_gan", "batch_size", "epochs", "buffer_capacity", "adam_beta1",
              "adam_beta2", "adam_eps", "val_fraction", "augment_virtual", "augment_real", "update_order", "pretrain",
              "global_predictor"});
  auto& t = c.train;
  read(train, "lambda_task", "train", t.lambda_task);
  read(train, "lr_predictor", "train", t.lr_predictor);
  read(train, "lr_gan", "train", t.lr_gan);
  read(train, "batch_size", "train", t.batch_size);
  read(train, "epochs", "train", t.epochs);
  read(train, "buffer_capacity", "train", t.buffer_capacity);
  read(train, "adam_beta1", "train", t.adam_beta1);
  read(train, "adam_beta2", "train", t.adam_beta2);
  read(train, "adam_eps", "train", t.adam_eps);
  read(train, "val_fraction", "train", t.val_fraction);
  read(train, "augment_virtual", "train", t.augment_virtual);
  read(train, "augment_real", "train", t.augment_real);
  read(train, "update_order", "train", t.update_order);
  if (train) {
    const auto pre = train["pretrain"];
    check_keys(pre, "train.pretrain", {"batch_size", "lr", "epochs"});
    read(pre, "batch_size", "train.pretrain", t.pretrain.batch_size);
    read(pre, "lr", "train.pretrain", t.pretrain.lr);
    read(pre, "epochs", "train.pretrain", t.pretrain.epochs);
    const auto gp = train["global_predictor"];
    check_keys(gp, "train.global_predictor", {"lr", "batch_size", "epochs", "equal_mix"});
    read(gp, "lr", "train.global_predictor", t.global_predictor.lr);
    read(gp, "batch_size", "train.global_predictor", t.global_predictor.batch_size);
    read(gp, "epochs", "train.global_predictor", t.global_predictor.epochs);
    read(gp, "equal_mix", "train.global_predictor", t.global_predictor.equal_mix);
  }

  const auto ev = root["eval"];
  check_keys(ev, "eval", {"output_dir", "variance_samples", "grid_frames"});
  read_path(ev, "output_dir", "eval", c.eval.output_dir);
  read(ev, "variance_samples", "eval", c.eval.variance_samples);
  read(ev, "grid_frames", "eval", c.eval.grid_frames);

  const auto ex = root["experiment"];
  check_keys(ex, "experiment", {"domain", "source_domain", "target_domain", "label_fractions"});
  read(ex, "domain", "experiment", c.experiment.domain);
  read(ex, "source_domain", "experiment", c.experiment.source_domain);
  read(ex, "target_domain", "experiment", c.experiment.target_domain);
  read(ex, "label_fractions", "experiment", c.experiment.label_fractions);

  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_yaml(const ExperimentConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "root" << YAML::Value << c.data.root.string();
  e << YAML::Key << "virtual_styles" << YAML::Value << YAML::Flow << c.data.virtual_styles;
  e << YAML::Key << "virtual_style" << YAML::Value << c.data.virtual_style;
  e << YAML::Key << "real_domains" << YAML::Value << YAML::Flow << c.data.real_domains;
  e << YAML::Key << "train_frames" << YAML::Value << c.data.train_frames;
  e << YAML::Key << "test_frames" << YAML::Value << c.data.test_frames;
  e << YAML::Key << "virtual_frames" << YAML::Value << c.data.virtual_frames;
  e << YAML::Key << "seed" << YAML::Value << c.data.seed;
  e << YAML::Key << "filter_deg" << YAML::Value << c.data.filter_deg;
  e << YAML::Key << "geometry" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "wheelbase_m" << YAML::Value << c.data.geometry.wheelbase_m;
  e << YAML::Key << "steer_ratio" << YAML::Value << c.data.geometry.steer_ratio;
  e << YAML::Key << "slip_coeff" << YAML::Value << c.data.geometry.slip_coeff;
  e << YAML::EndMap << YAML::EndMap;

  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "width_factor" << YAML::Value << c.train.arch.width_factor;
  e << YAML::Key << "residual_blocks" << YAML::Value << c.train.arch.residual_blocks;
  e << YAML::Key << "seed" << YAML::Value << c.train.seed;
  e << YAML::EndMap;

  const auto& t = c.train;
  e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "lambda_task" << YAML::Value << t.lambda_task;
  e << YAML::Key << "lr_predictor" << YAML::Value << t.lr_predictor;
  e << YAML::Key << "lr_gan" << YAML::Value << t.lr_gan;
  e << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
  e << YAML::Key << "epochs" << YAML::Value << t.epochs;
  e << YAML::Key << "buffer_capacity" << YAML::Value << t.buffer_capacity;
  e << YAML::Key << "adam_beta1" << YAML::Value << t.adam_beta1;
  e << YAML::Key << "adam_beta2" << YAML::Value << t.adam_beta2;
  e << YAML::Key << "adam_eps" << YAML::Value << t.adam_eps;
  e << YAML::Key << "val_fraction" << YAML::Value << t.val_fraction;
  e << YAML::Key << "augment_virtual" << YAML::Value << t.augment_virtual;
  e << YAML::Key << "augment_real" << YAML::Value << t.augment_real;
  e << YAML::Key << "update_order" << YAML::Value << t.update_order;
  e << YAML::Key << "pretrain" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "batch_size" << YAML::Value << t.pretrain.batch_size;
  e << YAML::Key << "lr" << YAML::Value << t.pretrain.lr;
  e << YAML::Key << "epochs" << YAML::Value << t.pretrain.epochs;
  e << YAML::EndMap;
  e << YAML::Key << "global_predictor" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "lr" << YAML::Value << t.global_predictor.lr;
  e << YAML::Key << "batch_size" << YAML::Value << t.global_predictor.batch_size;
  e << YAML::Key << "epochs" << YAML::Value << t.global_predictor.epochs;
  e << YAML::Key << "equal_mix" << YAML::Value << t.global_predictor.equal_mix;
  e << YAML::EndMap << YAML::EndMap;

  e << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "output_dir" << YAML::Value << c.eval.output_dir.string();
  e << YAML::Key << "variance_samples" << YAML::Value << c.eval.variance_samples;
  e << YAML::Key << "grid_frames" << YAML::Value << c.eval.grid_frames;
  e << YAML::EndMap;

  e << YAML::Key << "experiment" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "domain" << YAML::Value << c.experiment.domain;
  e << YAML::Key << "source_domain" << YAML::Value << c.experiment.source_domain;
  e << YAML::Key << "target_domain" << YAML::Value << c.experiment.target_domain;
  e << YAML::Key << "label_fractions" << YAML::Value << YAML::Flow << c.experiment.label_fractions;
  e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_yaml(cfg);
}

}  // namespace dudrive

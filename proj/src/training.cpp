#include "dudrive/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dudrive/errors.hpp"

namespace dudrive {

namespace {

torch::ScalarType dtype_of(const torch::nn::Module& m) { return m.parameters(true).front().scalar_type(); }

std::vector<torch::Tensor> grads_of(const torch::Tensor& loss, const std::vector<torch::Tensor>& params) {
  return torch::autograd::grad({loss}, params, /*grad_outputs=*/{}, /*retain_graph=*/false,
                               /*create_graph=*/false, /*allow_unused=*/true);
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (!(lr_predictor >= 0) || !(lr_gan >= 0) || !(pretrain.lr >= 0) || !(global_predictor.lr >= 0))
    fail("learning rates must be >= 0");
  if (!(lambda_task >= 0)) fail("lambda_task must be >= 0");
  if (batch_size < 1 || pretrain.batch_size < 1 || global_predictor.batch_size < 1) fail("batch sizes must be >= 1");
  if (epochs < 0 || pretrain.epochs < 0 || global_predictor.epochs < 0) fail("epochs must be >= 0");
  if (buffer_capacity < 1) fail("buffer_capacity must be >= 1");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) || !(adam_eps > 0))
    fail("invalid Adam hyperparameters");
  if (!(val_fraction >= 0 && val_fraction < 1)) fail("val_fraction must be in [0, 1)");
  auto order = update_order;
  std::sort(order.begin(), order.end());
  if (order != "dgp") fail("update_order must be a permutation of 'gpd'");
  arch.validate();
}

// ---------------------------------------------------------------- losses

torch::Tensor domain_loss_d(const torch::Tensor& scores_virtual, const torch::Tensor& scores_fake) {
  if (scores_virtual.numel() == 0 || scores_fake.numel() == 0) throw InvalidInput("domain_loss_d: empty scores");
  return 0.5 * (scores_virtual - 1.0).pow(2).mean() + 0.5 * scores_fake.pow(2).mean();
}

torch::Tensor domain_loss_g(const torch::Tensor& scores_fake) {
  if (scores_fake.numel() == 0) throw InvalidInput("domain_loss_g: empty scores");
  return 0.5 * (scores_fake - 1.0).pow(2).mean();
}

torch::Tensor task_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& weights) {
  if (pred.numel() != target.numel() || pred.numel() != weights.numel()) {
    throw DimensionError("task_loss: prediction, target and weight lengths differ");
  }
  if (pred.numel() == 0) throw InvalidInput("task_loss: empty batch");
  auto w = weights.reshape({-1}).to(pred.scalar_type());
  auto diff = pred.reshape({-1}) - target.reshape({-1}).to(pred.scalar_type());
  return (w * diff * diff).sum() / w.sum();
}

torch::Tensor task_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  return task_loss(pred, target, torch::ones({pred.numel()}, pred.options()));
}

// ---------------------------------------------------------------- history buffer

HistoryBuffer::HistoryBuffer(int capacity, std::uint64_t seed) : capacity_(capacity), rng_(mix_seed(seed)) {
  if (capacity < 1) throw ConfigError("buffer capacity must be >= 1");
}

HistoryBuffer::HistoryBuffer(int capacity, DrawFn draw) : HistoryBuffer(capacity, std::uint64_t{0}) {
  scripted_ = std::move(draw);
}

double HistoryBuffer::draw() { return scripted_ ? scripted_() : uniform01(rng_); }

torch::Tensor HistoryBuffer::query(const torch::Tensor& fresh_batch) {
  auto fresh = fresh_batch.detach();
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<std::size_t>(fresh.size(0)));
  for (std::int64_t b = 0; b < fresh.size(0); ++b) {
    auto image = fresh[b];
    if (images_.size() < static_cast<std::size_t>(capacity_)) {
      images_.push_back(image.clone());
      out.push_back(image);
    } else if (draw() >= 0.5) {
      const auto n = images_.size();
      const auto slot = std::min(static_cast<std::size_t>(draw() * static_cast<double>(n)), n - 1);
      out.push_back(images_[slot]);
      images_[slot] = image.clone();
    } else {
      out.push_back(image);
    }
  }
  return torch::stack(out, 0);
}

void HistoryBuffer::save(Checkpoint& ck, const std::string& prefix) const {
  ck.meta[prefix + "rng"] = rng_state(rng_);
  ck.meta[prefix + "size"] = images_.size();
  if (!images_.empty()) ck.add(prefix + "images", torch::stack(images_, 0));
}

void HistoryBuffer::load(const Checkpoint& ck, const std::string& prefix) {
  restore_rng_state(rng_, ck.meta.at(prefix + "rng").get<std::string>());
  images_.clear();
  const auto n = ck.meta.at(prefix + "size").get<std::size_t>();
  if (n > 0) {
    const auto& stacked = ck.get(prefix + "images");
    for (std::int64_t i = 0; i < stacked.size(0); ++i) images_.push_back(stacked[i].clone());
  }
}

// ---------------------------------------------------------------- optimizer

void adam_step(const std::vector<torch::Tensor>& params, const std::vector<torch::Tensor>& grads, AdamState& state,
               const AdamOptions& opts) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter and gradient counts differ");
  if (state.exp_avg.empty()) {
    for (const auto& p : params) {
      state.exp_avg.push_back(torch::zeros_like(p));
      state.exp_avg_sq.push_back(torch::zeros_like(p));
    }
  }
  if (state.exp_avg.size() != params.size() || state.exp_avg_sq.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].defined() && grads[i].sizes() != params[i].sizes()) {
      throw DimensionError("adam_step: gradient shape differs from its parameter");
    }
    if (state.exp_avg[i].sizes() != params[i].sizes()) {
      throw DimensionError("adam_step: state shape differs from its parameter");
    }
  }
  torch::NoGradGuard guard;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = grads[i].defined() ? grads[i] : torch::zeros_like(params[i]);
    auto& m = state.exp_avg[i];
    auto& v = state.exp_avg_sq[i];
    m.mul_(opts.beta1).add_(g, 1.0 - opts.beta1);
    v.mul_(opts.beta2).addcmul_(g, g, 1.0 - opts.beta2);
    auto update = (m / bc1) / ((v / bc2).sqrt() + opts.eps);
    params[i].sub_(update * opts.lr);
  }
}

void AdamState::save(Checkpoint& ck, const std::string& prefix) const {
  ck.meta[prefix + "step"] = step;
  for (std::size_t i = 0; i < exp_avg.size(); ++i) {
    ck.add(prefix + "m." + std::to_string(i), exp_avg[i]);
    ck.add(prefix + "v." + std::to_string(i), exp_avg_sq[i]);
  }
}

void AdamState::load(const Checkpoint& ck, const std::string& prefix, const std::vector<torch::Tensor>& params) {
  step = ck.meta.at(prefix + "step").get<std::int64_t>();
  exp_avg.clear();
  exp_avg_sq.clear();
  if (step == 0) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& m = ck.get(prefix + "m." + std::to_string(i));
    const auto& v = ck.get(prefix + "v." + std::to_string(i));
    if (m.sizes() != params[i].sizes() || v.sizes() != params[i].sizes()) {
      throw CheckpointError("optimizer state shape mismatch under '" + prefix + "'");
    }
    exp_avg.push_back(m.to(params[i].scalar_type()).clone());
    exp_avg_sq.push_back(v.to(params[i].scalar_type()).clone());
  }
}

// ---------------------------------------------------------------- data feeding

Batch gather(const std::vector<TrainingSource>& sources, const std::vector<std::pair<int, std::int64_t>>& slots,
             torch::ScalarType dtype) {
  Batch batch;
  std::vector<torch::Tensor> images;
  std::vector<double> targets, weights;
  images.reserve(slots.size());
  for (const auto& [d, i] : slots) {
    const auto& set = *sources.at(static_cast<std::size_t>(d)).frames;
    const auto n = static_cast<std::int64_t>(set.size());
    const bool flipped = i >= n;
    const auto base = flipped ? i - n : i;
    auto img = set.images[base];
    images.push_back(flipped ? img.flip({-1}) : img);
    const double u = set.inv_radius[static_cast<std::size_t>(base)];
    targets.push_back(flipped ? -u : u);
    weights.push_back(set.weight[static_cast<std::size_t>(base)]);
    batch.domains.push_back(d);
  }
  batch.images = torch::stack(images, 0).to(dtype);
  batch.targets = torch::tensor(targets, torch::kFloat64).to(dtype);
  batch.weights = torch::tensor(weights, torch::kFloat64).to(dtype);
  return batch;
}

MixedSampler::MixedSampler(std::vector<TrainingSource> sources, int batch_size, bool equal_mix, std::uint64_t seed)
    : sources_(std::move(sources)), batch_size_(batch_size), equal_mix_(equal_mix), rng_(mix_seed(seed)) {
  if (sources_.empty()) throw DatasetError("sampler needs at least one source");
  if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
  for (const auto& s : sources_) {
    if (s.frames == nullptr || s.frames->empty()) throw DatasetError("sampler source is empty");
    std::vector<std::int64_t> perm(s.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int64_t>(i);
    shuffle(perm, rng_);
    perms_.push_back(std::move(perm));
    cursors_.push_back(0);
  }
}

std::size_t MixedSampler::total() const {
  std::size_t n = 0;
  for (const auto& s : sources_) n += s.size();
  return n;
}

std::int64_t MixedSampler::steps_per_epoch() const {
  return static_cast<std::int64_t>((total() + static_cast<std::size_t>(batch_size_) - 1) /
                                   static_cast<std::size_t>(batch_size_));
}

std::pair<int, std::int64_t> MixedSampler::draw_slot() {
  int d = 0;
  if (sources_.size() > 1) {
    const double u = uniform01(rng_);
    double acc = 0.0;
    const double tot = static_cast<double>(total());
    d = static_cast<int>(sources_.size()) - 1;
    for (std::size_t k = 0; k < sources_.size(); ++k) {
      acc += equal_mix_ ? 1.0 / static_cast<double>(sources_.size()) : static_cast<double>(sources_[k].size()) / tot;
      if (u < acc) {
        d = static_cast<int>(k);
        break;
      }
    }
  }
  auto& perm = perms_[static_cast<std::size_t>(d)];
  auto& cur = cursors_[static_cast<std::size_t>(d)];
  if (cur == perm.size()) {
    shuffle(perm, rng_);
    cur = 0;
  }
  return {d, perm[cur++]};
}

Batch MixedSampler::next(torch::ScalarType dtype) {
  const auto tot = static_cast<std::int64_t>(total());
  const auto steps = steps_per_epoch();
  const std::int64_t count =
      step_in_epoch_ + 1 == steps ? tot - (steps - 1) * batch_size_ : static_cast<std::int64_t>(batch_size_);
  step_in_epoch_ = (step_in_epoch_ + 1) % steps;
  std::vector<std::pair<int, std::int64_t>> slots;
  slots.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) slots.push_back(draw_slot());
  return gather(sources_, slots, dtype);
}

Batch MixedSampler::next_n(std::size_t n, torch::ScalarType dtype) {
  std::vector<std::pair<int, std::int64_t>> slots;
  slots.reserve(n);
  for (std::size_t i = 0; i < n; ++i) slots.push_back(draw_slot());
  return gather(sources_, slots, dtype);
}

nlohmann::json MixedSampler::state() const {
  return {{"rng", rng_state(rng_)}, {"perms", perms_}, {"cursors", cursors_}, {"step_in_epoch", step_in_epoch_}};
}

void MixedSampler::restore(const nlohmann::json& state) {
  restore_rng_state(rng_, state.at("rng").get<std::string>());
  perms_ = state.at("perms").get<std::vector<std::vector<std::int64_t>>>();
  cursors_ = state.at("cursors").get<std::vector<std::size_t>>();
  step_in_epoch_ = state.at("step_in_epoch").get<std::int64_t>();
  if (perms_.size() != sources_.size()) throw CheckpointError("sampler state does not match its sources");
  for (std::size_t k = 0; k < sources_.size(); ++k) {
    if (perms_[k].size() != sources_[k].size()) throw CheckpointError("sampler state does not match its sources");
  }
}

FrameSet map_through_generator(Generator& g, const FrameSet& set, int batch) {
  torch::NoGradGuard guard;
  const auto dtype = dtype_of(*g);
  FrameSet out = set;
  std::vector<torch::Tensor> chunks;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(set.size()); i += batch) {
    auto x = set.images.slice(0, i, std::min<std::int64_t>(i + batch, static_cast<std::int64_t>(set.size())));
    chunks.push_back(g->forward(x.to(dtype)).to(torch::kFloat32));
  }
  out.images = torch::cat(chunks, 0);
  return out;
}

std::vector<double> predict_inv_radius(Predictor& p, const FrameSet& set, int batch) {
  torch::NoGradGuard guard;
  const auto dtype = dtype_of(*p);
  std::vector<double> out;
  out.reserve(set.size());
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(set.size()); i += batch) {
    auto x = set.images.slice(0, i, std::min<std::int64_t>(i + batch, static_cast<std::int64_t>(set.size())));
    auto u = p->forward(x.to(dtype)).to(torch::kFloat64).contiguous();
    out.insert(out.end(), u.data_ptr<double>(), u.data_ptr<double>() + u.numel());
  }
  return out;
}

EvalReport evaluate(Predictor& p, const FrameSet& set, Generator* g, const std::string& model_tag) {
  if (set.empty()) throw DatasetError("cannot evaluate on an empty frame set");
  std::vector<double> u;
  if (g != nullptr) {
    const FrameSet mapped = map_through_generator(*g, set);
    u = predict_inv_radius(p, mapped);
  } else {
    u = predict_inv_radius(p, set);
  }
  std::vector<double> theta(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) theta[i] = inv_radius_to_steering(u[i], set.speed_mps[i], set.geometry);
  auto report = mae_sd(theta, set.steering_rad);
  report.domain_id = set.domain_id;
  report.model_tag = model_tag;
  return report;
}

// ---------------------------------------------------------------- predictor fitting

FitOptions predictor_fit_options(const TrainConfig& cfg) {
  FitOptions o;
  o.lr = cfg.lr_predictor;
  o.batch_size = cfg.batch_size;
  o.epochs = cfg.epochs;
  o.beta1 = cfg.adam_beta1;
  o.beta2 = cfg.adam_beta2;
  o.eps = cfg.adam_eps;
  o.seed = cfg.seed;
  return o;
}

PredictorTrainer::PredictorTrainer(Predictor p, std::vector<TrainingSource> sources, const FitOptions& opts,
                                   const FrameSet* validation)
    : p_(std::move(p)),
      params_(parameter_list(*p_)),
      opts_(opts),
      validation_(validation),
      sampler_(std::move(sources), opts.batch_size, opts.equal_mix, mix_seed(opts.seed, hash_name("fit_predictor"))) {
  if (opts_.epochs < 0 || !(opts_.lr >= 0)) throw ConfigError("invalid predictor fitting options");
}

double PredictorTrainer::step() {
  if (finished()) throw ContractViolation("predictor fitting already finished");
  auto batch = sampler_.next(dtype_of(*p_));
  auto loss = task_loss(p_->forward(batch.images), batch.targets, batch.weights);
  const double value = loss.item<double>();
  if (!std::isfinite(value)) {
    throw TrainingAborted("predictor fitting: epoch " + std::to_string(epoch_) + " step " +
                          std::to_string(log_.step_loss.size()) + ": non-finite task loss " + std::to_string(value));
  }
  adam_step(params_, grads_of(loss, params_), adam_, {opts_.lr, opts_.beta1, opts_.beta2, opts_.eps});
  log_.step_loss.push_back(value);
  if (++step_in_epoch_ == steps_per_epoch()) {
    step_in_epoch_ = 0;
    ++epoch_;
    if (validation_ != nullptr) log_.epoch_val_mae_deg.push_back(evaluate(p_, *validation_).mae_deg);
  }
  return value;
}

void PredictorTrainer::run_epoch() {
  do {
    step();
  } while (step_in_epoch_ != 0);
}

void PredictorTrainer::run(const std::function<void(const PredictorTrainer&)>& on_epoch_end) {
  while (!finished()) {
    run_epoch();
    if (on_epoch_end) on_epoch_end(*this);
  }
}

Checkpoint PredictorTrainer::snapshot() const {
  Checkpoint ck;
  ck.add_module("P/", *p_);
  adam_.save(ck, "adamP/");
  ck.meta["kind"] = "predictor_trainer";
  ck.meta["epoch"] = epoch_;
  ck.meta["step_in_epoch"] = step_in_epoch_;
  ck.meta["sampler"] = sampler_.state();
  ck.meta["step_loss"] = log_.step_loss;
  ck.meta["epoch_val_mae_deg"] = log_.epoch_val_mae_deg;
  return ck;
}

void PredictorTrainer::restore(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "predictor_trainer") throw CheckpointError("not a predictor-training checkpoint");
  ck.load_module("P/", *p_);
  adam_.load(ck, "adamP/", params_);
  epoch_ = ck.meta.at("epoch").get<int>();
  step_in_epoch_ = ck.meta.at("step_in_epoch").get<std::int64_t>();
  sampler_.restore(ck.meta.at("sampler"));
  log_.step_loss = ck.meta.at("step_loss").get<std::vector<double>>();
  log_.epoch_val_mae_deg = ck.meta.at("epoch_val_mae_deg").get<std::vector<double>>();
}

FitLog fit_predictor(Predictor& p, const std::vector<TrainingSource>& sources, const FitOptions& opts,
                     const FrameSet* validation, const std::function<void(int)>& on_epoch_end) {
  PredictorTrainer trainer(p, sources, opts, validation);
  trainer.run([&](const PredictorTrainer& t) {
    if (on_epoch_end) on_epoch_end(t.epoch() - 1);
  });
  return trainer.log();
}

PretrainResult pretrain_predictor(const FrameSet& virtual_set, const TrainConfig& cfg) {
  cfg.validate();
  if (virtual_set.empty()) throw DatasetError("pretraining needs a non-empty virtual dataset");
  PretrainResult r;
  r.predictor = make_predictor(cfg.arch, cfg.seed);
  FitOptions o = predictor_fit_options(cfg);
  o.lr = cfg.pretrain.lr;
  o.batch_size = cfg.pretrain.batch_size;
  o.epochs = cfg.pretrain.epochs;
  o.seed = mix_seed(cfg.seed, hash_name("pretrain"));
  r.log = fit_predictor(r.predictor, {TrainingSource{&virtual_set, cfg.augment_virtual}}, o);
  return r;
}

// ---------------------------------------------------------------- metrics

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,epoch,loss_d,loss_g_adv,loss_task,val_mae_deg\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%d,%.17g,%.17g,%.17g,", static_cast<long long>(r.step), r.epoch, r.loss_d,
                  r.loss_g_adv, r.loss_task);
    out << buf;
    if (r.val_mae_deg) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.val_mae_deg);
      out << buf;
    }
    out << "\n";
  }
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() < 5) throw DatasetError("malformed metrics row in " + path.string());
    MetricsRow r;
    r.step = std::stoll(f[0]);
    r.epoch = std::stoi(f[1]);
    r.loss_d = std::stod(f[2]);
    r.loss_g_adv = std::stod(f[3]);
    r.loss_task = std::stod(f[4]);
    if (f.size() > 5 && !f[5].empty()) r.val_mae_deg = std::stod(f[5]);
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------- joint training

DuDriveTrainer::DuDriveTrainer(const FrameSet& real_train, const FrameSet& virtual_train,
                               const FrameSet* real_validation, Generator g, Predictor p, Discriminator d,
                               const TrainConfig& cfg, DuDriveOptions opts)
    : cfg_(cfg),
      opts_(opts),
      validation_(real_validation),
      g_(std::move(g)),
      p_(std::move(p)),
      d_(std::move(d)),
      buffer_(cfg.buffer_capacity, mix_seed(cfg.seed, hash_name("buffer") ^ opts.buffer_seed_salt)),
      real_sampler_({TrainingSource{&real_train, cfg.augment_real}}, cfg.batch_size, false,
                    mix_seed(cfg.seed, hash_name("real_batches"))),
      virtual_sampler_({TrainingSource{&virtual_train, cfg.augment_virtual}}, cfg.batch_size, false,
                       mix_seed(cfg.seed, hash_name("virtual_batches"))) {
  cfg_.validate();
  g_params_ = parameter_list(*g_);
  p_params_ = parameter_list(*p_);
  d_params_ = parameter_list(*d_);
}

void DuDriveTrainer::check_finite(const char* what, double value) const {
  if (std::isfinite(value)) return;
  std::ostringstream os;
  os << "non-finite " << what << " at step " << step_ << " (epoch " << epoch_ << "): loss_d=" << current_.loss_d
     << " loss_g_adv=" << current_.loss_g_adv << " loss_task=" << current_.loss_task;
  throw TrainingAborted(os.str());
}

void DuDriveTrainer::step_generator(const Batch& real) {
  auto fake = g_->forward(real.images);
  auto adv = domain_loss_g(d_->forward(fake));
  torch::Tensor objective = adv;
  if (cfg_.lambda_task != 0.0) {
    auto task = task_loss(p_->forward(fake), real.targets, real.weights);
    current_.loss_task = task.item<double>();
    objective = adv + cfg_.lambda_task * task;
  } else {
    torch::NoGradGuard guard;
    current_.loss_task = task_loss(p_->forward(fake.detach()), real.targets, real.weights).item<double>();
  }
  current_.loss_g_adv = adv.item<double>();
  check_finite("generator loss", current_.loss_g_adv);
  check_finite("task loss", current_.loss_task);
  adam_step(g_params_, grads_of(objective, g_params_), adam_g_,
            {cfg_.lr_gan, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps});
}

void DuDriveTrainer::step_predictor(const Batch& real, const torch::Tensor& fakes) {
  auto loss = task_loss(p_->forward(fakes), real.targets, real.weights);
  check_finite("predictor loss", loss.item<double>());
  adam_step(p_params_, grads_of(loss, p_params_), adam_p_,
            {cfg_.lr_predictor, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps});
}

void DuDriveTrainer::step_discriminator(const torch::Tensor& fakes, const Batch& virt) {
  auto pooled = buffer_.query(fakes);
  auto loss = domain_loss_d(d_->forward(virt.images), d_->forward(pooled));
  current_.loss_d = loss.item<double>();
  check_finite("discriminator loss", current_.loss_d);
  adam_step(d_params_, grads_of(loss, d_params_), adam_d_,
            {cfg_.lr_gan, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps});
}

MetricsRow DuDriveTrainer::step() {
  if (finished()) throw ContractViolation("training already ran for the configured number of epochs");
  const auto dtype = dtype_of(*g_);
  current_ = MetricsRow{};
  current_.step = step_;
  current_.epoch = epoch_;
  auto real = real_sampler_.next(dtype);
  auto virt = virtual_sampler_.next_n(static_cast<std::size_t>(real.images.size(0)), dtype);

  torch::Tensor fakes;
  auto current_fakes = [&]() -> const torch::Tensor& {
    if (!fakes.defined()) {
      torch::NoGradGuard guard;
      fakes = g_->forward(real.images);
    }
    return fakes;
  };
  for (char c : cfg_.update_order) {
    switch (c) {
      case 'g':
        step_generator(real);
        fakes = torch::Tensor();  // generator moved; regenerate for later sub-steps
        break;
      case 'p':
        if (opts_.update_predictor) step_predictor(real, current_fakes());
        break;
      case 'd':
        step_discriminator(current_fakes(), virt);
        break;
      default:
        break;
    }
  }
  ++step_;
  if (++step_in_epoch_ == steps_per_epoch()) {
    if (validation_ != nullptr && !validation_->empty()) {
      current_.val_mae_deg = evaluate(p_, *validation_, &g_).mae_deg;
    }
    step_in_epoch_ = 0;
    ++epoch_;
  }
  metrics_.push_back(current_);
  return current_;
}

void DuDriveTrainer::run_epoch() {
  do {
    step();
  } while (step_in_epoch_ != 0);
}

void DuDriveTrainer::run(const std::function<void(const DuDriveTrainer&)>& on_epoch_end) {
  while (!finished()) {
    run_epoch();
    if (on_epoch_end) on_epoch_end(*this);
  }
}

Checkpoint DuDriveTrainer::snapshot() const {
  Checkpoint ck;
  ck.add_module("G/", *g_);
  ck.add_module("P/", *p_);
  ck.add_module("D/", *d_);
  adam_g_.save(ck, "adamG/");
  adam_p_.save(ck, "adamP/");
  adam_d_.save(ck, "adamD/");
  buffer_.save(ck, "buffer/");
  ck.meta["kind"] = "dudrive_trainer";
  ck.meta["step"] = step_;
  ck.meta["step_in_epoch"] = step_in_epoch_;
  ck.meta["epoch"] = epoch_;
  ck.meta["real_sampler"] = real_sampler_.state();
  ck.meta["virtual_sampler"] = virtual_sampler_.state();
  auto rows = nlohmann::json::array();
  for (const auto& r : metrics_) {
    rows.push_back({r.step, r.epoch, r.loss_d, r.loss_g_adv, r.loss_task,
                    r.val_mae_deg ? nlohmann::json(*r.val_mae_deg) : nlohmann::json()});
  }
  ck.meta["metrics"] = rows;
  return ck;
}

void DuDriveTrainer::restore(const Checkpoint& ck) {
  if (ck.meta.value("kind", "") != "dudrive_trainer") throw CheckpointError("not a training-state checkpoint");
  ck.load_module("G/", *g_);
  ck.load_module("P/", *p_);
  ck.load_module("D/", *d_);
  adam_g_.load(ck, "adamG/", g_params_);
  adam_p_.load(ck, "adamP/", p_params_);
  adam_d_.load(ck, "adamD/", d_params_);
  buffer_.load(ck, "buffer/");
  step_ = ck.meta.at("step").get<std::int64_t>();
  step_in_epoch_ = ck.meta.at("step_in_epoch").get<std::int64_t>();
  epoch_ = ck.meta.at("epoch").get<int>();
  real_sampler_.restore(ck.meta.at("real_sampler"));
  virtual_sampler_.restore(ck.meta.at("virtual_sampler"));
  metrics_.clear();
  for (const auto& r : ck.meta.at("metrics")) {
    MetricsRow row;
    row.step = r[0].get<std::int64_t>();
    row.epoch = r[1].get<int>();
    row.loss_d = r[2].get<double>();
    row.loss_g_adv = r[3].get<double>();
    row.loss_task = r[4].get<double>();
    if (!r[5].is_null()) row.val_mae_deg = r[5].get<double>();
    metrics_.push_back(row);
  }
}

DuDriveResult dudrive_train(const FrameSet& real_train, const FrameSet& virtual_train, const Predictor& pretrained,
                            const TrainConfig& cfg, const FrameSet* real_validation, DuDriveOptions opts) {
  if (real_train.empty() || virtual_train.empty()) throw DatasetError("joint training needs non-empty datasets");
  DuDriveTrainer trainer(real_train, virtual_train, real_validation, make_generator(cfg.arch, cfg.seed),
                         clone(pretrained), make_discriminator(cfg.arch, cfg.seed), cfg, opts);
  trainer.run();
  return {trainer.generator(), trainer.predictor(), trainer.discriminator(), trainer.metrics()};
}

}  // namespace dudrive

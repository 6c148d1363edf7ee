#pragma once

// Losses, optimizer, history buffer and the training loops: predictor fitting
// (pretraining and the end-to-end baselines) and the alternating
// generator / predictor / discriminator scheme.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dudrive/analysis.hpp"
#include "dudrive/checkpoint.hpp"
#include "dudrive/geometry.hpp"
#include "dudrive/models.hpp"
#include "dudrive/random.hpp"

namespace dudrive {

struct PretrainConfig {
  int batch_size = 2000;
  double lr = 0.01;
  int epochs = 7;
};

struct GlobalPredictorConfig {
  double lr = 0.001;
  int batch_size = 2000;
  int epochs = 7;
  bool equal_mix = false;  // equal share per domain instead of proportional to size
};

struct TrainConfig {
  double lambda_task = 0.5;
  double lr_predictor = 0.0002;
  double lr_gan = 0.00002;
  int batch_size = 60;
  int epochs = 7;
  int buffer_capacity = 50;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  PretrainConfig pretrain;
  GlobalPredictorConfig global_predictor;
  std::uint64_t seed = 0;
  ArchConfig arch;
  double val_fraction = 0.1;
  bool augment_virtual = true;  // flip augmentation of virtual training data
  bool augment_real = true;
  std::string update_order = "gpd";  // permutation of g, p, d

  /// Throws ConfigError for negative rates or lambda, non-positive sizes,
  /// capacity < 1 or an invalid update order. A rate of 0 freezes that network.
  void validate() const;
};

// ---------------------------------------------------------------- losses

/// 1/2 mean((s_v - 1)^2) + 1/2 mean(s_f^2). Least-squares discriminator loss.
torch::Tensor domain_loss_d(const torch::Tensor& scores_virtual, const torch::Tensor& scores_fake);

/// 1/2 mean((s_f - 1)^2). Least-squares generator loss.
torch::Tensor domain_loss_g(const torch::Tensor& scores_fake);

/// sum(w (pred - true)^2) / sum(w). Throws DimensionError on length mismatch.
torch::Tensor task_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& weights);
torch::Tensor task_loss(const torch::Tensor& pred, const torch::Tensor& target);

// ---------------------------------------------------------------- history buffer

/// Pool of previously generated images shown to the discriminator.
class HistoryBuffer {
 public:
  /// Source of uniform draws in [0, 1); replaces the internal generator in tests.
  using DrawFn = std::function<double()>;

  HistoryBuffer(int capacity, std::uint64_t seed);
  HistoryBuffer(int capacity, DrawFn draw);

  /// Per image: while below capacity, store a copy and pass the fresh image
  /// through. When full, a draw >= 0.5 swaps it with a uniformly chosen stored
  /// image (the stored one is returned); otherwise the fresh image is returned.
  torch::Tensor query(const torch::Tensor& fresh);

  int capacity() const { return capacity_; }
  std::size_t size() const { return images_.size(); }
  const std::vector<torch::Tensor>& images() const { return images_; }

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix);

 private:
  double draw();

  int capacity_;
  Rng rng_;
  DrawFn scripted_;
  std::vector<torch::Tensor> images_;
};

// ---------------------------------------------------------------- optimizer

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<torch::Tensor> exp_avg;
  std::vector<torch::Tensor> exp_avg_sq;
  std::int64_t step = 0;

  void save(Checkpoint& ck, const std::string& prefix) const;
  void load(const Checkpoint& ck, const std::string& prefix, const std::vector<torch::Tensor>& params);
};

/// One bias-corrected Adam update, in place. Undefined gradients count as zero.
/// Throws DimensionError when parameter, gradient and state shapes disagree.
void adam_step(const std::vector<torch::Tensor>& params, const std::vector<torch::Tensor>& grads, AdamState& state,
               const AdamOptions& opts);

// ---------------------------------------------------------------- data feeding

/// A training source: a frame set, optionally extended with its mirrored copy
/// (index i >= N refers to the flip of frame i - N).
struct TrainingSource {
  const FrameSet* frames = nullptr;
  bool flips = false;

  std::size_t size() const { return frames->size() * (flips ? 2 : 1); }
};

struct Batch {
  torch::Tensor images;   // [B, 3, H, W]
  torch::Tensor targets;  // inverse radius [B]
  torch::Tensor weights;  // [B]
  std::vector<int> domains;
};

/// Draws batches from one or more sources. Each slot picks a source (in
/// proportion to source size, or uniformly with equal_mix) and then the next
/// index of that source's running permutation. One epoch is ceil(total / batch) batches.
class MixedSampler {
 public:
  MixedSampler(std::vector<TrainingSource> sources, int batch_size, bool equal_mix, std::uint64_t seed);

  std::size_t total() const;
  std::int64_t steps_per_epoch() const;
  /// Next batch; the final batch of each epoch may be short.
  Batch next(torch::ScalarType dtype = torch::kFloat32);
  /// n slots outside the epoch accounting (used for the virtual side of joint training).
  Batch next_n(std::size_t n, torch::ScalarType dtype = torch::kFloat32);

  nlohmann::json state() const;
  void restore(const nlohmann::json& state);

 private:
  std::pair<int, std::int64_t> draw_slot();

  std::vector<TrainingSource> sources_;
  int batch_size_;
  bool equal_mix_;
  Rng rng_;
  std::vector<std::vector<std::int64_t>> perms_;
  std::vector<std::size_t> cursors_;
  std::int64_t step_in_epoch_ = 0;
};

/// Gathers the given (source, index) slots into a batch.
Batch gather(const std::vector<TrainingSource>& sources, const std::vector<std::pair<int, std::int64_t>>& slots,
             torch::ScalarType dtype = torch::kFloat32);

/// Runs the generator over a whole frame set (no grad). Labels are carried over unchanged.
FrameSet map_through_generator(Generator& g, const FrameSet& set, int batch = 100);

/// Predicted inverse radius for every frame (no grad).
std::vector<double> predict_inv_radius(Predictor& p, const FrameSet& set, int batch = 200);

/// Steering MAE/SD in degrees of the predictor over a frame set, optionally behind a generator.
EvalReport evaluate(Predictor& p, const FrameSet& set, Generator* g = nullptr, const std::string& model_tag = {});

// ---------------------------------------------------------------- predictor fitting

struct FitOptions {
  double lr = 0.0002;
  int batch_size = 60;
  int epochs = 7;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool equal_mix = false;
  std::uint64_t seed = 0;
};

struct FitLog {
  std::vector<double> step_loss;
  std::vector<double> epoch_val_mae_deg;  // empty without a validation set
};

/// Epoch-wise task_loss minimization with Adam, checkpointable between steps.
class PredictorTrainer {
 public:
  PredictorTrainer(Predictor p, std::vector<TrainingSource> sources, const FitOptions& opts,
                   const FrameSet* validation = nullptr);

  /// One Adam step; returns the batch loss. Throws TrainingAborted on a non-finite loss.
  double step();
  void run_epoch();
  void run(const std::function<void(const PredictorTrainer&)>& on_epoch_end = {});

  int epoch() const { return epoch_; }
  bool finished() const { return epoch_ >= opts_.epochs; }
  std::int64_t steps_per_epoch() const { return sampler_.steps_per_epoch(); }
  const FitLog& log() const { return log_; }
  Predictor& predictor() { return p_; }

  Checkpoint snapshot() const;
  void restore(const Checkpoint& ck);

 private:
  Predictor p_;
  std::vector<torch::Tensor> params_;
  FitOptions opts_;
  const FrameSet* validation_;
  MixedSampler sampler_;
  AdamState adam_;
  std::int64_t step_in_epoch_ = 0;
  int epoch_ = 0;
  FitLog log_;
};

/// Minimizes task_loss over the sources with Adam. Aborts on a non-finite loss.
/// on_epoch_end receives the zero-based index of the epoch just finished.
FitLog fit_predictor(Predictor& p, const std::vector<TrainingSource>& sources, const FitOptions& opts,
                     const FrameSet* validation = nullptr, const std::function<void(int)>& on_epoch_end = {});

FitOptions predictor_fit_options(const TrainConfig& cfg);

struct PretrainResult {
  Predictor predictor{nullptr};
  FitLog log;
};

/// Trains a fresh predictor on virtual frames with the pretraining batch size and rate.
PretrainResult pretrain_predictor(const FrameSet& virtual_set, const TrainConfig& cfg);

// ---------------------------------------------------------------- joint training

struct MetricsRow {
  std::int64_t step = 0;
  int epoch = 0;
  double loss_d = 0.0;
  double loss_g_adv = 0.0;
  double loss_task = 0.0;
  std::optional<double> val_mae_deg;

  bool operator==(const MetricsRow&) const = default;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

struct DuDriveOptions {
  bool update_predictor = true;  // false: generator and discriminator only
  std::uint64_t buffer_seed_salt = 0;
};

/// Alternating G / P / D training on one real and one virtual frame set.
/// Per step with a real batch and a virtual batch:
///   G: minimize domain_loss_g(D(G(x_r))) + lambda * task_loss(P(G(x_r)), y_r)
///   P: minimize task_loss(P(G(x_r)), y_r)
///   D: minimize domain_loss_d(D(x_v), D(buffer(G(x_r))))
/// in the configured order, each with its own Adam state.
class DuDriveTrainer {
 public:
  DuDriveTrainer(const FrameSet& real_train, const FrameSet& virtual_train, const FrameSet* real_validation,
                 Generator g, Predictor p, Discriminator d, const TrainConfig& cfg, DuDriveOptions opts = {});

  /// One alternating step. Throws TrainingAborted on a non-finite loss.
  MetricsRow step();
  /// Runs the remaining steps of the current epoch and records validation MAE.
  void run_epoch();
  /// Runs epochs until cfg.epochs; on_epoch_end fires after each one.
  void run(const std::function<void(const DuDriveTrainer&)>& on_epoch_end = {});

  int epoch() const { return epoch_; }
  std::int64_t global_step() const { return step_; }
  std::int64_t steps_per_epoch() const { return real_sampler_.steps_per_epoch(); }
  bool finished() const { return epoch_ >= cfg_.epochs; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  const HistoryBuffer& buffer() const { return buffer_; }

  Generator& generator() { return g_; }
  Predictor& predictor() { return p_; }
  Discriminator& discriminator() { return d_; }

  /// Full training state: parameters, optimizer moments, buffer, samplers, RNG and metrics.
  Checkpoint snapshot() const;
  void restore(const Checkpoint& ck);

 private:
  void step_generator(const Batch& real);
  void step_predictor(const Batch& real, const torch::Tensor& fakes);
  void step_discriminator(const torch::Tensor& fakes, const Batch& virt);
  void check_finite(const char* what, double value) const;

  TrainConfig cfg_;
  DuDriveOptions opts_;
  const FrameSet* validation_;
  Generator g_;
  Predictor p_;
  Discriminator d_;
  std::vector<torch::Tensor> g_params_, p_params_, d_params_;
  AdamState adam_g_, adam_p_, adam_d_;
  HistoryBuffer buffer_;
  MixedSampler real_sampler_;
  MixedSampler virtual_sampler_;
  std::int64_t step_ = 0;
  std::int64_t step_in_epoch_ = 0;
  int epoch_ = 0;
  MetricsRow current_;
  std::vector<MetricsRow> metrics_;
};

struct DuDriveResult {
  Generator generator{nullptr};
  Predictor predictor{nullptr};
  Discriminator discriminator{nullptr};
  std::vector<MetricsRow> metrics;
};

/// Convenience wrapper: fresh G and D from cfg.seed, the given predictor as P.
DuDriveResult dudrive_train(const FrameSet& real_train, const FrameSet& virtual_train, const Predictor& pretrained,
                            const TrainConfig& cfg, const FrameSet* real_validation = nullptr,
                            DuDriveOptions opts = {});

}  // namespace dudrive

#pragma once

// Multi-domain orchestration: one frozen generator per real domain, a global
// predictor over the generated images of every domain, and the
// reduced-label protocol for a new target domain.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dudrive/geometry.hpp"
#include "dudrive/models.hpp"
#include "dudrive/training.hpp"
#include "json.hpp"

namespace dudrive {

/// A real domain together with the generator trained on it.
class DomainBundle {
 public:
  DomainBundle() = default;
  DomainBundle(std::string domain_id, VehicleGeometry geometry, Generator generator, nlohmann::json provenance = {});

  const std::string& domain_id() const { return domain_id_; }
  const VehicleGeometry& geometry() const { return geometry_; }
  /// Where the training data came from (dataset path or synthetic recipe, seed, frame count).
  const nlohmann::json& provenance() const { return provenance_; }
  DatasetIndex dataset;  // optional; empty for in-memory synthetic data

  /// Read-only use is always allowed.
  const Generator& generator() const { return generator_; }
  /// Throws ContractViolation once the bundle is frozen.
  Generator& mutable_generator();

  /// Disables gradients on every generator parameter; irreversible.
  void freeze();
  bool frozen() const { return frozen_; }

  /// Runs the generator over a frame set without gradients.
  FrameSet map(const FrameSet& set) const;

  void save(const std::filesystem::path& stem) const;
  static DomainBundle load(const std::filesystem::path& stem);

 private:
  std::string domain_id_;
  VehicleGeometry geometry_;
  Generator generator_{nullptr};
  nlohmann::json provenance_ = nlohmann::json::object();
  bool frozen_ = false;
};

struct DomainRun {
  DomainBundle bundle;
  Predictor predictor{nullptr};  // the co-trained predictor of the run
  std::vector<MetricsRow> metrics;
};

/// Joint training on one real domain; the bundle comes back frozen.
DomainRun train_domain(const FrameSet& real_train, const FrameSet& virtual_train, const Predictor& pretrained,
                       const TrainConfig& cfg, const FrameSet* real_validation = nullptr, DuDriveOptions opts = {});

/// Same as train_domain, discarding the run's private predictor.
DomainBundle train_domain_generator(const FrameSet& real_train, const FrameSet& virtual_train,
                                    const Predictor& pretrained, const TrainConfig& cfg);

/// Labeled data of one domain for the global predictor.
struct DomainData {
  const DomainBundle* bundle = nullptr;
  const FrameSet* train = nullptr;
  const FrameSet* validation = nullptr;  // optional
};

struct GlobalPredictorResult {
  Predictor predictor{nullptr};
  FitLog log;
  /// Validation MAE per domain (outer index) and epoch.
  std::vector<std::vector<double>> val_mae_deg;
};

/// Generated training/validation images of every domain plus the fitting
/// options; train_global_predictor runs a PredictorTrainer over it.
struct GlobalPredictorPlan {
  std::vector<FrameSet> train;       // per domain, already mapped (and flipped when augmenting)
  std::vector<FrameSet> validation;  // per domain, mapped; empty when not given
  FitOptions options;

  std::vector<TrainingSource> sources() const;
};

GlobalPredictorPlan plan_global_predictor(const std::vector<DomainData>& domains, const TrainConfig& cfg);

/// Trains a copy of `init` on the generated images of every domain, each
/// mapped by its own frozen generator. Batches mix domains in proportion to
/// their sizes (or equally, per cfg.global_predictor.equal_mix). Only the
/// predictor is updated. Throws ContractViolation for an unfrozen bundle.
GlobalPredictorResult train_global_predictor(const std::vector<DomainData>& domains, const Predictor& init,
                                             const TrainConfig& cfg);

/// First ceil(fraction * n) entries of a seed-dependent permutation, sorted.
/// Smaller fractions yield subsets of larger ones for the same seed.
std::vector<std::int64_t> label_subset(std::size_t n, double fraction, std::uint64_t seed);

struct SemiSupervisedResult {
  double fraction = 0.0;
  std::vector<std::int64_t> subset;
  EvalReport single;    // target generator + its co-trained predictor
  EvalReport unified;   // target generator + global predictor over {source, target}
  EvalReport pilotnet;  // predictor trained directly on the labeled subset
  DomainRun target_run;
};

/// Trains a target-domain generator on the labeled fraction of the target
/// training set and evaluates the three models on the target test set.
/// Throws DatasetError when the subset is empty.
SemiSupervisedResult run_semi_supervised(const DomainBundle& source, const FrameSet& source_train,
                                         const FrameSet& target_train, const FrameSet& target_test, double fraction,
                                         const FrameSet& virtual_train, const Predictor& pretrained,
                                         const TrainConfig& cfg);

/// Predictor trained directly on real frames (no generator), starting from
/// `init` when given, otherwise from a fresh initialization.
Predictor train_direct_predictor(const std::vector<const FrameSet*>& sets, const TrainConfig& cfg,
                                 const Predictor* init = nullptr, FitLog* log = nullptr);

}  // namespace dudrive

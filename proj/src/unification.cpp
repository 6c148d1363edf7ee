#include "dudrive/unification.hpp"

#include <algorithm>
#include <cmath>

#include "dudrive/errors.hpp"
#include "dudrive/random.hpp"

namespace dudrive {

DomainBundle::DomainBundle(std::string domain_id, VehicleGeometry geometry, Generator generator,
                           nlohmann::json provenance)
    : domain_id_(std::move(domain_id)),
      geometry_(geometry),
      generator_(std::move(generator)),
      provenance_(provenance.is_null() ? nlohmann::json::object() : std::move(provenance)) {}

Generator& DomainBundle::mutable_generator() {
  if (frozen_) throw ContractViolation("generator of domain '" + domain_id_ + "' is frozen");
  return generator_;
}

void DomainBundle::freeze() {
  if (!generator_) throw ContractViolation("cannot freeze a bundle without a generator");
  for (auto& p : generator_->parameters()) p.set_requires_grad(false);
  frozen_ = true;
}

FrameSet DomainBundle::map(const FrameSet& set) const {
  auto g = generator_;
  return map_through_generator(g, set);
}

void DomainBundle::save(const std::filesystem::path& stem) const {
  Checkpoint ck;
  ck.add_module("G/", *generator_);
  const auto& a = generator_->arch;
  ck.meta["kind"] = "domain_bundle";
  ck.meta["domain_id"] = domain_id_;
  ck.meta["geometry"] = {{"wheelbase_m", geometry_.wheelbase_m},
                         {"steer_ratio", geometry_.steer_ratio},
                         {"slip_coeff", geometry_.slip_coeff}};
  ck.meta["arch"] = {{"width_factor", a.width_factor},
                     {"residual_blocks", a.residual_blocks},
                     {"height", a.height},
                     {"width", a.width}};
  ck.meta["provenance"] = provenance_;
  ck.meta["frozen"] = frozen_;
  ck.meta["dataset_root"] = dataset.root.string();
  ck.save(stem);
}

DomainBundle DomainBundle::load(const std::filesystem::path& stem) {
  const auto ck = Checkpoint::load(stem);
  if (ck.meta.value("kind", "") != "domain_bundle") throw CheckpointError(stem.string() + " is not a domain bundle");
  ArchConfig arch;
  const auto& a = ck.meta.at("arch");
  arch.width_factor = a.at("width_factor").get<double>();
  arch.residual_blocks = a.at("residual_blocks").get<int>();
  arch.height = a.at("height").get<int>();
  arch.width = a.at("width").get<int>();
  Generator g(arch);
  ck.load_module("G/", *g);
  const auto& gm = ck.meta.at("geometry");
  VehicleGeometry geom{gm.at("wheelbase_m").get<double>(), gm.at("steer_ratio").get<double>(),
                       gm.at("slip_coeff").get<double>()};
  DomainBundle b(ck.meta.at("domain_id").get<std::string>(), geom, g, ck.meta.at("provenance"));
  b.dataset.root = ck.meta.value("dataset_root", "");
  b.dataset.domain_id = b.domain_id();
  b.dataset.geometry = geom;
  if (ck.meta.value("frozen", false)) b.freeze();
  return b;
}

DomainRun train_domain(const FrameSet& real_train, const FrameSet& virtual_train, const Predictor& pretrained,
                       const TrainConfig& cfg, const FrameSet* real_validation, DuDriveOptions opts) {
  auto result = dudrive_train(real_train, virtual_train, pretrained, cfg, real_validation, opts);
  nlohmann::json provenance = {{"real_domain", real_train.domain_id},
                               {"virtual_domain", virtual_train.domain_id},
                               {"real_frames", real_train.size()},
                               {"seed", cfg.seed},
                               {"epochs", cfg.epochs},
                               {"lambda_task", cfg.lambda_task},
                               {"update_predictor", opts.update_predictor}};
  DomainRun run{DomainBundle(real_train.domain_id, real_train.geometry, result.generator, provenance),
                result.predictor, result.metrics};
  run.bundle.freeze();
  return run;
}

DomainBundle train_domain_generator(const FrameSet& real_train, const FrameSet& virtual_train,
                                    const Predictor& pretrained, const TrainConfig& cfg) {
  return train_domain(real_train, virtual_train, pretrained, cfg).bundle;
}

std::vector<TrainingSource> GlobalPredictorPlan::sources() const {
  std::vector<TrainingSource> out;
  for (const auto& m : train) out.push_back({&m, false});
  return out;
}

GlobalPredictorPlan plan_global_predictor(const std::vector<DomainData>& domains, const TrainConfig& cfg) {
  cfg.validate();
  if (domains.empty()) throw DatasetError("global predictor needs at least one domain");
  // Generated images are computed once; the generators are frozen, so this
  // equals mapping every batch on the fly.
  GlobalPredictorPlan plan;
  for (const auto& d : domains) {
    if (d.bundle == nullptr || d.train == nullptr) throw InvalidInput("domain entry without bundle or data");
    if (!d.bundle->frozen()) {
      throw ContractViolation("generator of domain '" + d.bundle->domain_id() + "' must be frozen");
    }
    if (d.train->empty()) throw DatasetError("domain '" + d.bundle->domain_id() + "' has no training frames");
    plan.train.push_back(d.bundle->map(cfg.augment_real ? with_flips(*d.train) : *d.train));
    plan.validation.push_back(d.validation != nullptr ? d.bundle->map(*d.validation) : FrameSet{});
  }
  plan.options = predictor_fit_options(cfg);
  plan.options.lr = cfg.global_predictor.lr;
  plan.options.batch_size = cfg.global_predictor.batch_size;
  plan.options.epochs = cfg.global_predictor.epochs;
  plan.options.equal_mix = cfg.global_predictor.equal_mix;
  plan.options.seed = mix_seed(cfg.seed, hash_name("global_predictor"));
  return plan;
}

GlobalPredictorResult train_global_predictor(const std::vector<DomainData>& domains, const Predictor& init,
                                             const TrainConfig& cfg) {
  const auto plan = plan_global_predictor(domains, cfg);
  GlobalPredictorResult r;
  r.predictor = clone(init);
  r.val_mae_deg.resize(domains.size());
  PredictorTrainer trainer(r.predictor, plan.sources(), plan.options);
  trainer.run([&](const PredictorTrainer&) {
    for (std::size_t k = 0; k < plan.validation.size(); ++k) {
      if (!plan.validation[k].empty()) r.val_mae_deg[k].push_back(evaluate(r.predictor, plan.validation[k]).mae_deg);
    }
  });
  r.log = trainer.log();
  return r;
}

std::vector<std::int64_t> label_subset(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidInput("label fraction must be in (0, 1]");
  std::vector<std::int64_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::int64_t>(i);
  auto rng = make_rng(seed, "label_subset");
  shuffle(perm, rng);
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  perm.resize(std::min(k, n));
  std::sort(perm.begin(), perm.end());
  return perm;
}

Predictor train_direct_predictor(const std::vector<const FrameSet*>& sets, const TrainConfig& cfg,
                                 const Predictor* init, FitLog* log) {
  cfg.validate();
  std::vector<TrainingSource> sources;
  for (const auto* s : sets) {
    if (s == nullptr || s->empty()) throw DatasetError("direct predictor training needs non-empty datasets");
    sources.push_back({s, cfg.augment_real});
  }
  Predictor p = init != nullptr ? clone(*init) : make_predictor(cfg.arch, cfg.seed);
  FitOptions o = predictor_fit_options(cfg);
  o.seed = mix_seed(cfg.seed, hash_name("direct_predictor"));
  auto l = fit_predictor(p, sources, o);
  if (log != nullptr) *log = std::move(l);
  return p;
}

SemiSupervisedResult run_semi_supervised(const DomainBundle& source, const FrameSet& source_train,
                                         const FrameSet& target_train, const FrameSet& target_test, double fraction,
                                         const FrameSet& virtual_train, const Predictor& pretrained,
                                         const TrainConfig& cfg) {
  SemiSupervisedResult r;
  r.fraction = fraction;
  r.subset = label_subset(target_train.size(), fraction, cfg.seed);
  if (r.subset.empty()) throw DatasetError("labeled subset is empty");
  const FrameSet labeled = target_train.subset(r.subset);

  r.target_run = train_domain(labeled, virtual_train, pretrained, cfg);
  auto target_gen = r.target_run.bundle.generator();
  r.single = evaluate(r.target_run.predictor, target_test, &target_gen, "dudrive_single");

  auto global = train_global_predictor({{&source, &source_train, nullptr}, {&r.target_run.bundle, &labeled, nullptr}},
                                       pretrained, cfg);
  r.unified = evaluate(global.predictor, target_test, &target_gen, "dudrive_unified");

  auto direct = train_direct_predictor({&labeled}, cfg);
  r.pilotnet = evaluate(direct, target_test, nullptr, "pilotnet");
  return r;
}

}  // namespace dudrive

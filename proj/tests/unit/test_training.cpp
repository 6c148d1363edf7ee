#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "../common/oracles.hpp"
#include "dudrive/errors.hpp"
#include "dudrive/synthworld.hpp"
#include "dudrive/training.hpp"

using namespace dudrive;
namespace fs = std::filesystem;

namespace {

ArchConfig small_arch() {
  ArchConfig a;
  a.width_factor = 0.125;
  a.residual_blocks = 1;
  a.height = 64;
  a.width = 64;
  return a;
}

torch::Tensor vec(const std::vector<double>& v) { return torch::tensor(v, torch::kFloat64); }

struct Nets {
  Generator g{nullptr};
  Predictor p{nullptr};
  Discriminator d{nullptr};
};

Nets make_nets(std::uint64_t seed, bool f64 = true) {
  const auto a = small_arch();
  Nets n{make_generator(a, seed), make_predictor(a, seed + 1), make_discriminator(a, seed + 2)};
  if (f64) {
    n.g->to(torch::kFloat64);
    n.p->to(torch::kFloat64);
    n.d->to(torch::kFloat64);
  }
  return n;
}

Nets clone_nets(const Nets& n) { return {clone(n.g), clone(n.p), clone(n.d)}; }

TrainConfig small_config() {
  TrainConfig c;
  c.arch = small_arch();
  c.batch_size = 3;
  c.epochs = 2;
  c.buffer_capacity = 5;
  c.lr_gan = 1e-3;
  c.lr_predictor = 2e-3;
  c.lambda_task = 0.7;
  c.seed = 5;
  return c;
}

bool same_params(const torch::nn::Module& a, const torch::nn::Module& b) {
  const auto pa = parameter_list(a), pb = parameter_list(b);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!torch::equal(pa[i], pb[i])) return false;
  return true;
}

// Sum over samples of d loss_i / d params, each sample through its own forward pass.
std::vector<torch::Tensor> summed_grads(const std::vector<torch::Tensor>& params, int n,
                                        const std::function<torch::Tensor(int)>& loss_of) {
  std::vector<torch::Tensor> total;
  for (const auto& p : params) total.push_back(torch::zeros_like(p));
  for (int i = 0; i < n; ++i) {
    auto g = torch::autograd::grad({loss_of(i)}, params, {}, false, false, true);
    for (std::size_t k = 0; k < params.size(); ++k)
      if (g[k].defined()) total[k] += g[k];
  }
  return total;
}

// First Adam step element by element; returns the new parameter values.
std::vector<std::vector<double>> adam_first_step(const std::vector<torch::Tensor>& params,
                                                 const std::vector<torch::Tensor>& grads, double lr, const TrainConfig& c) {
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = oracle::flat(params[k]);
    const auto g = oracle::flat(grads[k]);
    for (std::size_t i = 0; i < w.size(); ++i) {
      oracle::ScalarAdam a{lr, c.adam_beta1, c.adam_beta2, c.adam_eps};
      w[i] = a.step(w[i], g[i]);
    }
    out.push_back(w);
  }
  return out;
}

double max_delta_gap(const std::vector<torch::Tensor>& before, const torch::nn::Module& after,
                     const std::vector<std::vector<double>>& expected) {
  const auto now = parameter_list(after);
  double worst = 0;
  for (std::size_t k = 0; k < now.size(); ++k) {
    const auto b = oracle::flat(before[k]);
    const auto a = oracle::flat(now[k]);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs((a[i] - b[i]) - (expected[k][i] - b[i])));
  }
  return worst;
}

std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : parameter_list(m)) out.push_back(p.detach().clone());
  return out;
}

}  // namespace

// ---------------------------------------------------------------- losses

TEST(Losses, DomainLossDExamples) {
  EXPECT_DOUBLE_EQ(domain_loss_d(vec({1, 1}), vec({0, 0})).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(domain_loss_d(vec({0.5, 0.5}), vec({0.5, 0.5})).item<double>(), 0.25);
}

TEST(Losses, DomainLossGExamples) {
  EXPECT_DOUBLE_EQ(domain_loss_g(vec({1})).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(domain_loss_g(vec({0, 2})).item<double>(), 0.5);
}

TEST(Losses, TaskLossExamples) {
  EXPECT_DOUBLE_EQ(task_loss(vec({0.3, -0.1}), vec({0.3, -0.1})).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(task_loss(vec({1, -1}), vec({0, 0}), vec({1, 1})).item<double>(), 1.0);
  EXPECT_THROW(task_loss(vec({1, 2}), vec({1})), DimensionError);
}

TEST(Losses, MatchScalarRecomputation) {
  auto rng = make_rng(3, "losses");
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 9));
    const int m = 1 + static_cast<int>(uniform_index(rng, 9));
    std::vector<double> sv(n), sf(m), pred(n), truth(n), w(n);
    for (auto& a : sv) a = 4 * uniform01(rng) - 2;
    for (auto& a : sf) a = 4 * uniform01(rng) - 2;
    for (auto& a : pred) a = uniform01(rng) - 0.5;
    for (auto& a : truth) a = uniform01(rng) - 0.5;
    for (auto& a : w) a = 0.1 + uniform01(rng);
    double ev = 0, ef = 0, eg = 0;
    for (double a : sv) ev += (a - 1) * (a - 1);
    for (double a : sf) {
      ef += a * a;
      eg += (a - 1) * (a - 1);
    }
    const double d_ref = 0.5 * ev / n + 0.5 * ef / m;
    const double g_ref = 0.5 * eg / m;
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i) {
      num += w[i] * (pred[i] - truth[i]) * (pred[i] - truth[i]);
      den += w[i];
    }
    EXPECT_NEAR(domain_loss_d(vec(sv), vec(sf)).item<double>(), d_ref, 1e-12);
    EXPECT_NEAR(domain_loss_g(vec(sf)).item<double>(), g_ref, 1e-12);
    EXPECT_NEAR(task_loss(vec(pred), vec(truth), vec(w)).item<double>(), num / den, 1e-12);
  }
}

// ---------------------------------------------------------------- history buffer

TEST(HistoryBuffer, WarmUpPassesFreshImages) {
  HistoryBuffer buf(50, 1);
  const auto fresh = torch::rand({5, 3, 4, 4});
  EXPECT_TRUE(torch::equal(buf.query(fresh), fresh));
  EXPECT_EQ(buf.size(), 5u);
}

TEST(HistoryBuffer, CapacityBound) {
  HistoryBuffer buf(50, 2);
  for (int i = 0; i < 20; ++i) buf.query(torch::rand({5, 3, 2, 2}));
  EXPECT_EQ(buf.size(), 50u);
}

TEST(HistoryBuffer, ScriptedSwapTrace) {
  std::vector<double> draws{0.7, 0.6, 0.2, 0.9, 0.0};
  std::size_t next = 0;
  HistoryBuffer buf(2, [&] { return draws.at(next++); });
  auto img = [](float v) { return torch::full({1, 1, 1, 1}, v); };
  buf.query(img(1));
  buf.query(img(2));
  EXPECT_EQ(next, 0u);  // warm-up consumes no draws

  // 0.7 -> swap; 0.6 picks slot floor(0.6 * 2) = 1, which held 2.
  EXPECT_EQ(buf.query(img(3)).item<float>(), 2.0f);
  EXPECT_EQ(buf.images()[1].item<float>(), 3.0f);
  // 0.2 -> fresh image returned, buffer untouched.
  EXPECT_EQ(buf.query(img(4)).item<float>(), 4.0f);
  EXPECT_EQ(buf.images()[0].item<float>(), 1.0f);
  EXPECT_EQ(buf.images()[1].item<float>(), 3.0f);
  // 0.9 -> swap; 0.0 picks slot 0.
  EXPECT_EQ(buf.query(img(5)).item<float>(), 1.0f);
  EXPECT_EQ(buf.images()[0].item<float>(), 5.0f);
  EXPECT_EQ(next, draws.size());
}

TEST(HistoryBuffer, DeterministicAndCheckpointable) {
  HistoryBuffer a(4, 9), b(4, 9);
  torch::manual_seed(0);
  std::vector<torch::Tensor> batches;
  for (int i = 0; i < 6; ++i) batches.push_back(torch::rand({3, 1, 2, 2}));
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(torch::equal(a.query(batches[i]), b.query(batches[i])));

  Checkpoint ck;
  a.save(ck, "buf/");
  HistoryBuffer c(4, 123);
  c.load(ck, "buf/");
  for (int i = 3; i < 6; ++i) EXPECT_TRUE(torch::equal(a.query(batches[i]), c.query(batches[i])));
}

// ---------------------------------------------------------------- Adam

TEST(Adam, ZeroGradientAndZeroRateLeaveParameters) {
  auto w = torch::randn({3, 2}, torch::kFloat64);
  const auto w0 = w.clone();
  AdamState s;
  adam_step({w}, {torch::zeros_like(w)}, s, {1e-2, 0.5, 0.999, 1e-8});
  EXPECT_TRUE(torch::equal(w, w0));
  AdamState s2;
  adam_step({w}, {torch::randn_like(w)}, s2, {0.0, 0.5, 0.999, 1e-8});
  EXPECT_TRUE(torch::equal(w, w0));
  EXPECT_EQ(s2.step, 1);
}

TEST(Adam, MatchesScalarOracle) {
  // f(w) = w^2 / 2, gradient w.
  auto w = torch::ones({1}, torch::kFloat64);
  AdamState s;
  const AdamOptions o{0.1, 0.5, 0.999, 1e-8};
  oracle::ScalarAdam ref{0.1, 0.5, 0.999, 1e-8};
  double w_ref = 1.0;
  for (int t = 0; t < 2; ++t) {
    const auto g = w.clone();
    adam_step({w}, {g}, s, o);
    w_ref = ref.step(w_ref, w_ref);
    EXPECT_NEAR(w.item<double>(), w_ref, 1e-12);
  }
  EXPECT_EQ(s.step, 2);
}

TEST(Adam, ShapeMismatch) {
  auto w = torch::zeros({2});
  AdamState s;
  EXPECT_THROW(adam_step({w}, {torch::zeros({3})}, s, {}), DimensionError);
  EXPECT_THROW(adam_step({w}, {}, s, {}), DimensionError);
}

// ---------------------------------------------------------------- LSGAN

TEST(LeastSquaresGan, TabularDiscriminatorReachesOptimum) {
  // Eight atoms; probabilities as counts out of 32.
  const std::vector<int> pv{8, 6, 5, 4, 4, 3, 2, 0};
  const std::vector<int> pf{1, 2, 4, 4, 6, 3, 4, 8};
  std::vector<std::int64_t> iv, jf;
  for (int a = 0; a < 8; ++a) {
    for (int k = 0; k < pv[a]; ++k) iv.push_back(a);
    for (int k = 0; k < pf[a]; ++k) jf.push_back(a);
  }
  const auto xv = torch::one_hot(torch::tensor(iv), 8).to(torch::kFloat64);
  const auto xf = torch::one_hot(torch::tensor(jf), 8).to(torch::kFloat64);
  auto table = torch::zeros({8}, torch::kFloat64).requires_grad_(true);
  AdamState s;
  for (int step = 0; step < 4000; ++step) {
    auto loss = domain_loss_d(xv.matmul(table), xf.matmul(table));
    auto g = torch::autograd::grad({loss}, {table});
    torch::NoGradGuard guard;
    adam_step({table}, g, s, {step < 3000 ? 0.02 : 0.002, 0.5, 0.999, 1e-8});
  }
  for (int a = 0; a < 8; ++a) {
    const double star = static_cast<double>(pv[a]) / (pv[a] + pf[a]);
    EXPECT_NEAR(table[a].item<double>(), star, 1e-2) << "atom " << a;
  }
}

// ---------------------------------------------------------------- sampler

TEST(MixedSampler, EpochHasShortFinalBatch) {
  const auto set = oracle::random_frames(7, 4, 4, 1);
  MixedSampler s({TrainingSource{&set, true}}, 4, false, 3);
  EXPECT_EQ(s.steps_per_epoch(), 4);
  std::vector<std::int64_t> sizes;
  for (int i = 0; i < 4; ++i) sizes.push_back(s.next().images.size(0));
  EXPECT_EQ(sizes, (std::vector<std::int64_t>{4, 4, 4, 2}));
}

TEST(MixedSampler, EpochVisitsEverySampleOnce) {
  auto set = oracle::random_frames(5, 2, 2, 2);
  for (std::size_t i = 0; i < set.size(); ++i) set.inv_radius[i] = static_cast<double>(i + 1);
  MixedSampler s({TrainingSource{&set, true}}, 3, false, 4);
  std::vector<double> targets;
  for (int i = 0; i < s.steps_per_epoch(); ++i) {
    const auto b = s.next(torch::kFloat64);
    for (int k = 0; k < b.targets.size(0); ++k) targets.push_back(b.targets[k].item<double>());
  }
  std::sort(targets.begin(), targets.end());
  EXPECT_EQ(targets, (std::vector<double>{-5, -4, -3, -2, -1, 1, 2, 3, 4, 5}));
}

TEST(MixedSampler, FlippedSlotsMirrorImages) {
  const auto set = oracle::random_frames(1, 2, 3, 5);
  const auto b = gather({TrainingSource{&set, true}}, {{0, 1}});
  EXPECT_TRUE(torch::equal(b.images[0], set.images[0].flip({-1})));
  EXPECT_FLOAT_EQ(b.targets[0].item<float>(), static_cast<float>(-set.inv_radius[0]));
}

// ---------------------------------------------------------------- predictor fitting

TEST(Pretrain, ZeroRateKeepsInitialization) {
  ArchConfig a = small_arch();
  TrainConfig c;
  c.arch = a;
  c.seed = 4;
  c.pretrain = {4, 0.0, 1};
  const auto set = oracle::random_frames(10, 64, 64, 6);
  const auto r = pretrain_predictor(set, c);
  EXPECT_TRUE(same_params(*r.predictor, *make_predictor(a, 4)));
  EXPECT_EQ(r.log.step_loss.size(), 5u);  // 20 samples with flips, batch 4
}

TEST(Pretrain, DeterministicAndRejectsEmpty) {
  TrainConfig c;
  c.arch = small_arch();
  c.seed = 8;
  c.pretrain = {6, 1e-3, 2};
  const auto set = oracle::random_frames(12, 64, 64, 7);
  const auto a = pretrain_predictor(set, c);
  const auto b = pretrain_predictor(set, c);
  EXPECT_TRUE(same_params(*a.predictor, *b.predictor));
  EXPECT_EQ(a.log.step_loss, b.log.step_loss);
  EXPECT_THROW(pretrain_predictor(FrameSet{}, c), DatasetError);
}

TEST(Pretrain, BeatsZeroPredictorOnVirtualFrames) {
  torch::set_num_threads(1);
  TrainConfig c;
  c.arch.width_factor = 0.125;
  c.arch.residual_blocks = 1;
  c.seed = 1;
  c.pretrain = {60, 1e-3, 3};
  const auto train = build_dataset(2000, virtual_torcs(), synthetic_geometry(), 41).frames;
  auto r = pretrain_predictor(train, c);
  std::vector<double> zero(train.size(), 0.0);
  const double zero_mae = mae_sd(zero, train.steering_rad).mae_deg;
  const double mae = evaluate(r.predictor, train).mae_deg;
  EXPECT_LT(mae, zero_mae);
  std::cout << "pretrain train MAE " << mae << " deg vs zero predictor " << zero_mae << " deg\n";
}

TEST(PredictorTrainer, ResumeEqualsUninterrupted) {
  const auto set = oracle::random_frames(9, 64, 64, 9);
  FitOptions o;
  o.batch_size = 4;
  o.epochs = 2;
  o.lr = 1e-3;
  o.seed = 2;
  auto init = make_predictor(small_arch(), 3);
  PredictorTrainer full(clone(init), {TrainingSource{&set, true}}, o, &set);
  full.run();

  PredictorTrainer first(clone(init), {TrainingSource{&set, true}}, o, &set);
  for (int i = 0; i < 7; ++i) first.step();
  const auto dir = fs::temp_directory_path() / "dudrive_fit_resume";
  fs::create_directories(dir);
  first.snapshot().save(dir / "ck");
  PredictorTrainer second(make_predictor(small_arch(), 77), {TrainingSource{&set, true}}, o, &set);
  second.restore(Checkpoint::load(dir / "ck"));
  second.run();
  EXPECT_EQ(second.log().step_loss, full.log().step_loss);
  EXPECT_EQ(second.log().epoch_val_mae_deg, full.log().epoch_val_mae_deg);
  EXPECT_TRUE(same_params(*second.predictor(), *full.predictor()));
}

TEST(PredictorTrainer, AbortsOnNonFiniteLoss) {
  auto set = oracle::random_frames(4, 64, 64, 10);
  set.images[1][0][0][0] = std::numeric_limits<float>::quiet_NaN();
  FitOptions o;
  o.batch_size = 8;
  o.epochs = 1;
  auto p = make_predictor(small_arch(), 1);
  EXPECT_THROW(fit_predictor(p, {TrainingSource{&set, false}}, o), TrainingAborted);
}

// ---------------------------------------------------------------- joint training

TEST(DuDrive, StraightLineSingleStepOracle) {
  const int n = 4;
  const auto real = oracle::random_frames(n, 64, 64, 11, "real");
  const auto virt = oracle::random_frames(n, 64, 64, 12, "virtual");
  auto c = small_config();
  c.batch_size = n;
  c.epochs = 1;
  c.augment_real = false;
  c.augment_virtual = false;

  const auto nets = make_nets(20);
  auto ref = clone_nets(nets);
  const auto g0 = snapshot(*nets.g), p0 = snapshot(*nets.p), d0 = snapshot(*nets.d);
  DuDriveTrainer t(real, virt, nullptr, nets.g, nets.p, nets.d, c);
  t.step();

  auto x = [&](int i) { return real.images[i].unsqueeze(0).to(torch::kFloat64); };
  auto v = [&](int i) { return virt.images[i].unsqueeze(0).to(torch::kFloat64); };
  auto y = [&](int i) { return real.inv_radius[static_cast<std::size_t>(i)]; };
  const double inv_n = 1.0 / n;

  // (1) generator: adversarial term plus lambda times the task term.
  const auto gp = parameter_list(*ref.g);
  const auto gg = summed_grads(gp, n, [&](int i) {
    auto f = ref.g->forward(x(i));
    auto s = ref.d->forward(f)[0];
    auto u = ref.p->forward(f)[0];
    return 0.5 * (s - 1).pow(2) * inv_n + c.lambda_task * (u - y(i)).pow(2) * inv_n;
  });
  const auto g_new = adam_first_step(gp, gg, c.lr_gan, c);
  EXPECT_LE(max_delta_gap(g0, *t.generator(), g_new), 1e-6);
  {
    torch::NoGradGuard guard;
    for (std::size_t k = 0; k < gp.size(); ++k) gp[k].copy_(vec(g_new[k]).view(gp[k].sizes()));
  }

  // (2) predictor on the updated generator's images.
  std::vector<torch::Tensor> fakes;
  {
    torch::NoGradGuard guard;
    for (int i = 0; i < n; ++i) fakes.push_back(ref.g->forward(x(i)));
  }
  const auto pp = parameter_list(*ref.p);
  const auto pg = summed_grads(pp, n, [&](int i) { return (ref.p->forward(fakes[i])[0] - y(i)).pow(2) * inv_n; });
  EXPECT_LE(max_delta_gap(p0, *t.predictor(), adam_first_step(pp, pg, c.lr_predictor, c)), 1e-6);

  // (3) discriminator; the warm-up buffer hands back the fresh images.
  const auto dp = parameter_list(*ref.d);
  const auto dg = summed_grads(dp, n, [&](int i) {
    return 0.5 * (ref.d->forward(v(i))[0] - 1).pow(2) * inv_n + 0.5 * ref.d->forward(fakes[i])[0].pow(2) * inv_n;
  });
  EXPECT_LE(max_delta_gap(d0, *t.discriminator(), adam_first_step(dp, dg, c.lr_gan, c)), 1e-6);
}

TEST(DuDrive, ZeroRatesLeaveEveryParameter) {
  const auto real = oracle::random_frames(6, 64, 64, 13);
  const auto virt = oracle::random_frames(6, 64, 64, 14);
  auto c = small_config();
  c.lr_gan = 0;
  c.lr_predictor = 0;
  const auto nets = make_nets(21, false);
  const auto ref = clone_nets(nets);
  DuDriveTrainer t(real, virt, nullptr, nets.g, nets.p, nets.d, c);
  t.run();
  EXPECT_EQ(t.global_step(), 2 * 4);
  EXPECT_TRUE(same_params(*t.generator(), *ref.g));
  EXPECT_TRUE(same_params(*t.predictor(), *ref.p));
  EXPECT_TRUE(same_params(*t.discriminator(), *ref.d));
}

TEST(DuDrive, UpdatesAreIsolated) {
  const auto real = oracle::random_frames(6, 64, 64, 15);
  const auto virt = oracle::random_frames(6, 64, 64, 16);
  {
    auto c = small_config();
    c.lr_gan = 0;
    const auto nets = make_nets(22, false);
    const auto ref = clone_nets(nets);
    DuDriveTrainer t(real, virt, nullptr, nets.g, nets.p, nets.d, c);
    for (int i = 0; i < 3; ++i) t.step();
    EXPECT_TRUE(same_params(*t.generator(), *ref.g));
    EXPECT_TRUE(same_params(*t.discriminator(), *ref.d));
    EXPECT_FALSE(same_params(*t.predictor(), *ref.p));
  }
  {
    auto c = small_config();
    c.lr_predictor = 0;
    const auto nets = make_nets(22, false);
    const auto ref = clone_nets(nets);
    DuDriveTrainer t(real, virt, nullptr, nets.g, nets.p, nets.d, c);
    for (int i = 0; i < 3; ++i) t.step();
    EXPECT_TRUE(same_params(*t.predictor(), *ref.p));
    EXPECT_FALSE(same_params(*t.generator(), *ref.g));
    EXPECT_FALSE(same_params(*t.discriminator(), *ref.d));
  }
}

TEST(DuDrive, ZeroLambdaSeversPredictorFromGenerator) {
  const auto real = oracle::random_frames(6, 64, 64, 17);
  const auto virt = oracle::random_frames(6, 64, 64, 18);
  auto c = small_config();
  c.lambda_task = 0;
  const auto a = make_nets(23, false);
  auto b = clone_nets(a);
  b.p = make_predictor(small_arch(), 999);  // a different predictor must not matter to G
  DuDriveTrainer ta(real, virt, nullptr, a.g, a.p, a.d, c);
  DuDriveTrainer tb(real, virt, nullptr, b.g, b.p, b.d, c);
  for (int i = 0; i < 4; ++i) {
    ta.step();
    tb.step();
    EXPECT_TRUE(same_params(*ta.generator(), *tb.generator())) << "step " << i;
    EXPECT_TRUE(same_params(*ta.discriminator(), *tb.discriminator())) << "step " << i;
  }
  EXPECT_NE(ta.metrics().back().loss_task, tb.metrics().back().loss_task);
}

TEST(DuDrive, DeterministicMetrics) {
  const auto real = oracle::random_frames(7, 64, 64, 19);
  const auto virt = oracle::random_frames(5, 64, 64, 20);
  const auto c = small_config();
  const auto a = make_nets(24, false);
  const auto b = clone_nets(a);
  DuDriveTrainer ta(real, virt, &real, a.g, a.p, a.d, c);
  DuDriveTrainer tb(real, virt, &real, b.g, b.p, b.d, c);
  ta.run();
  tb.run();
  EXPECT_EQ(ta.metrics(), tb.metrics());
  EXPECT_TRUE(ta.metrics().back().val_mae_deg.has_value());
  EXPECT_TRUE(same_params(*ta.generator(), *tb.generator()));
}

TEST(DuDrive, ResumeEqualsUninterrupted) {
  const auto real = oracle::random_frames(7, 64, 64, 21);
  const auto virt = oracle::random_frames(5, 64, 64, 22);
  const auto c = small_config();
  const auto init = make_nets(25, false);

  auto a = clone_nets(init);
  DuDriveTrainer full(real, virt, &real, a.g, a.p, a.d, c);
  full.run();

  auto b = clone_nets(init);
  DuDriveTrainer first(real, virt, &real, b.g, b.p, b.d, c);
  for (int i = 0; i < 7; ++i) first.step();  // into the second epoch with a full buffer
  const auto dir = fs::temp_directory_path() / "dudrive_joint_resume";
  fs::create_directories(dir);
  first.snapshot().save(dir / "ck");

  auto fresh = make_nets(99, false);
  DuDriveTrainer second(real, virt, &real, fresh.g, fresh.p, fresh.d, c);
  second.restore(Checkpoint::load(dir / "ck"));
  second.run();
  EXPECT_EQ(second.metrics(), full.metrics());
  EXPECT_TRUE(same_params(*second.generator(), *full.generator()));
  EXPECT_TRUE(same_params(*second.predictor(), *full.predictor()));
  EXPECT_TRUE(same_params(*second.discriminator(), *full.discriminator()));
}

TEST(DuDrive, BufferNeverHoldsVirtualImages) {
  const auto real = oracle::random_frames(8, 64, 64, 23);
  auto virt = oracle::random_frames(6, 64, 64, 24);
  // Tag: every virtual image carries the value 7 in one pixel, out of reach of tanh.
  virt.images.select(1, 0).select(1, 0).select(1, 0).fill_(7.0f);
  auto c = small_config();
  c.buffer_capacity = 4;
  const auto nets = make_nets(26, false);
  DuDriveTrainer t(real, virt, nullptr, nets.g, nets.p, nets.d, c);
  while (!t.finished()) {
    t.step();
    for (const auto& img : t.buffer().images()) {
      ASSERT_LT(img.abs().max().item<float>(), 1.0f);
    }
  }
  EXPECT_EQ(t.buffer().size(), 4u);
}

TEST(DuDrive, AbortsOnNonFiniteLoss) {
  auto real = oracle::random_frames(4, 64, 64, 25);
  real.images[2][1][5][5] = std::numeric_limits<float>::infinity();
  const auto virt = oracle::random_frames(4, 64, 64, 26);
  auto c = small_config();
  c.batch_size = 8;
  c.augment_real = false;
  const auto nets = make_nets(27, false);
  DuDriveTrainer t(real, virt, nullptr, nets.g, nets.p, nets.d, c);
  try {
    t.step();
    FAIL() << "non-finite loss not detected";
  } catch (const TrainingAborted& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
  }
}

TEST(Metrics, CsvRoundTrip) {
  std::vector<MetricsRow> rows{{0, 0, 0.25, 0.5, 1e-5, std::nullopt}, {1, 0, 0.1 / 3, 2.0 / 3, 1e-7, 4.25}};
  const auto path = fs::temp_directory_path() / "dudrive_metrics" / "m.csv";
  write_metrics_csv(path, rows);
  EXPECT_EQ(read_metrics_csv(path), rows);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr_gan = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.update_order = "ggd";
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.buffer_capacity = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lambda_task = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
}

#include <gtest/gtest.h>

#include "../common/oracles.hpp"
#include "dudrive/training.hpp"

using namespace dudrive;

// Finite-difference checks of every loss against autograd, in double precision.

namespace {

ArchConfig arch() {
  ArchConfig a;
  a.width_factor = 0.125;
  a.residual_blocks = 1;
  a.height = 64;
  a.width = 64;
  return a;
}

struct Fixture {
  Generator g = make_generator(arch(), 1);
  Predictor p = make_predictor(arch(), 2);
  Discriminator d = make_discriminator(arch(), 3);
  torch::Tensor xr, xv, y;

  Fixture() {
    g->to(torch::kFloat64);
    p->to(torch::kFloat64);
    d->to(torch::kFloat64);
    const auto real = oracle::random_frames(3, 64, 64, 4);
    const auto virt = oracle::random_frames(3, 64, 64, 5);
    xr = real.images.to(torch::kFloat64);
    xv = virt.images.to(torch::kFloat64);
    y = torch::tensor(real.inv_radius, torch::kFloat64);
  }
};

constexpr int kEntries = 24;
constexpr double kTol = 1e-3;
// The losses are piecewise smooth (ReLU, leaky ReLU); small weights put many
// activations near a kink, so the step has to stay well below 1e-5.
constexpr double kStep = 1e-7;

}  // namespace

TEST(Gradients, DiscriminatorLoss) {
  Fixture f;
  const auto fakes = f.g->forward(f.xr).detach();
  const auto r = oracle::finite_difference_check(
      parameter_list(*f.d), [&] { return domain_loss_d(f.d->forward(f.xv), f.d->forward(fakes)); }, kEntries, 1, kStep);
  EXPECT_EQ(r.checked, kEntries);
  EXPECT_LE(r.worst_rel, kTol);
}

TEST(Gradients, GeneratorAdversarialLoss) {
  Fixture f;
  const auto r = oracle::finite_difference_check(
      parameter_list(*f.g), [&] { return domain_loss_g(f.d->forward(f.g->forward(f.xr))); }, kEntries, 2, kStep);
  EXPECT_LE(r.worst_rel, kTol);
}

TEST(Gradients, GeneratorJointObjective) {
  Fixture f;
  const double lambda = 0.5;
  const auto r = oracle::finite_difference_check(
      parameter_list(*f.g),
      [&] {
        const auto fake = f.g->forward(f.xr);
        return domain_loss_g(f.d->forward(fake)) + lambda * task_loss(f.p->forward(fake), f.y);
      },
      kEntries, 3, kStep);
  EXPECT_LE(r.worst_rel, kTol);
}

TEST(Gradients, TaskLoss) {
  Fixture f;
  const auto fakes = f.g->forward(f.xr).detach();
  const auto w = torch::tensor({1.0, 0.5, 2.0}, torch::kFloat64);
  const auto r = oracle::finite_difference_check(
      parameter_list(*f.p), [&] { return task_loss(f.p->forward(fakes), f.y, w); }, kEntries, 4, kStep);
  EXPECT_LE(r.worst_rel, kTol);
}

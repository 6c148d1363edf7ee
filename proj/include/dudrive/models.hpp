#pragma once

// Generator G (real -> virtual), discriminator D and the PilotNet predictor P.
// Every network is a plain torch::nn::Module whose named parameters form its
// parameter collection; width_factor scales every conv channel count.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "dudrive/geometry.hpp"

namespace dudrive {

enum class Role { Generator, Discriminator, Predictor };

std::string role_name(Role role);
Role role_from_name(const std::string& name);

struct ArchConfig {
  double width_factor = 1.0;
  int residual_blocks = 6;
  int height = kFrameHeight;
  int width = kFrameWidth;

  /// width_factor must be one of 1, 1/2, 1/4, 1/8; residual_blocks >= 0.
  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

/// floor(base * width_factor), at least 1.
int scaled_channels(int base, double width_factor);

/// Output side of an unpadded convolution: floor((n - k) / s) + 1.
constexpr int conv_out(int n, int k, int s) { return (n - k) / s + 1; }

/// conv(k3) -> instance norm -> ReLU -> conv(k3) -> instance norm, plus the input.
struct ResidualBlockImpl : torch::nn::Module {
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::InstanceNorm2d norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// conv(64,k3,s2) -> conv(128,k3,s2) -> residual blocks -> deconv(64,k3,s1/2) ->
/// deconv(3,k3,s1/2) -> tanh. Instance norm + ReLU after every layer but the last.
struct GeneratorImpl : torch::nn::Module {
  explicit GeneratorImpl(const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& x);

  ArchConfig arch;
  torch::nn::Conv2d down1{nullptr}, down2{nullptr};
  torch::nn::InstanceNorm2d norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::ConvTranspose2d up1{nullptr}, up2{nullptr};
};
TORCH_MODULE(Generator);

/// conv(64,k4,s2) -> conv(128,k4,s2) -> conv(256,k4,s2) -> conv(1,k4,s1) -> global mean.
/// Hidden convs carry instance norm and leaky ReLU(0.2); the score is unbounded.
struct DiscriminatorImpl : torch::nn::Module {
  explicit DiscriminatorImpl(const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& x);  // [B]

  ArchConfig arch;
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, conv4{nullptr};
  torch::nn::InstanceNorm2d norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
};
TORCH_MODULE(Discriminator);

/// PilotNet: five unpadded ReLU convs (24/36/48 at k5 s2, 64/64 at k3 s1) and
/// fully connected 100 -> 50 -> 10 -> 1. Predicts the inverse turning radius.
struct PredictorImpl : torch::nn::Module {
  explicit PredictorImpl(const ArchConfig& arch);
  torch::Tensor forward(const torch::Tensor& x);  // [B]

  /// Spatial size of every conv output, starting with the input.
  static std::vector<std::pair<int, int>> feature_sizes(int height, int width);
  std::int64_t flatten_size() const;

  ArchConfig arch;
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, conv4{nullptr}, conv5{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr}, fc4{nullptr};
};
TORCH_MODULE(Predictor);

/// Deterministic initialization: conv/linear weights ~ normal truncated at two
/// standard deviations, biases 0, norm scale 1 / shift 0. The std is 0.02 for
/// the generator, the discriminator and the predictor's output layer, and
/// sqrt(2 / fan_in) for the predictor's hidden layers.
void init_params(torch::nn::Module& module, Role role, std::uint64_t seed);

Generator make_generator(const ArchConfig& arch, std::uint64_t seed);
Discriminator make_discriminator(const ArchConfig& arch, std::uint64_t seed);
Predictor make_predictor(const ArchConfig& arch, std::uint64_t seed);

/// Deep copy of a network (parameters cloned, same dtype).
Generator clone(const Generator& g);
Discriminator clone(const Discriminator& d);
Predictor clone(const Predictor& p);

/// Parameter tensors in registration order.
std::vector<torch::Tensor> parameter_list(const torch::nn::Module& module);

/// Expected (name, shape) list for a role, derived from the architecture table.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> parameter_manifest(Role role, const ArchConfig& arch);

/// Throws DimensionError unless x is [B, 3, arch.height, arch.width].
void check_batch_shape(const torch::Tensor& x, const ArchConfig& arch, const char* who);

}  // namespace dudrive

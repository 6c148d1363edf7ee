#include "dudrive/models.hpp"

#include <cmath>
#include <sstream>

#include "dudrive/errors.hpp"
#include "dudrive/random.hpp"

namespace dudrive {

namespace nn = torch::nn;

namespace {

nn::Conv2dOptions conv_opts(int in, int out, int k, int s, int p) {
  return nn::Conv2dOptions(in, out, k).stride(s).padding(p);
}

nn::InstanceNorm2d make_norm(int channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true).track_running_stats(false));
}

struct GeneratorWidths {
  int c1, c2;
};

GeneratorWidths generator_widths(const ArchConfig& a) {
  return {scaled_channels(64, a.width_factor), scaled_channels(128, a.width_factor)};
}

std::array<int, 3> discriminator_widths(const ArchConfig& a) {
  return {scaled_channels(64, a.width_factor), scaled_channels(128, a.width_factor),
          scaled_channels(256, a.width_factor)};
}

std::array<int, 5> predictor_widths(const ArchConfig& a) {
  return {scaled_channels(24, a.width_factor), scaled_channels(36, a.width_factor), scaled_channels(48, a.width_factor),
          scaled_channels(64, a.width_factor), scaled_channels(64, a.width_factor)};
}

template <typename ModuleHolder>
ModuleHolder clone_into(ModuleHolder fresh, const nn::Module& src) {
  torch::NoGradGuard guard;
  auto src_params = src.named_parameters(true);
  auto dst_params = fresh->named_parameters(true);
  for (auto& item : dst_params) {
    const auto& s = src_params[item.key()];
    item.value().set_data(s.detach().clone());
  }
  return fresh;
}

}  // namespace

std::string role_name(Role role) {
  switch (role) {
    case Role::Generator: return "generator";
    case Role::Discriminator: return "discriminator";
    case Role::Predictor: return "predictor";
  }
  return "unknown";
}

Role role_from_name(const std::string& name) {
  if (name == "generator") return Role::Generator;
  if (name == "discriminator") return Role::Discriminator;
  if (name == "predictor") return Role::Predictor;
  throw InvalidInput("unknown network role '" + name + "'");
}

void ArchConfig::validate() const {
  const bool ok = width_factor == 1.0 || width_factor == 0.5 || width_factor == 0.25 || width_factor == 0.125;
  if (!ok) throw ConfigError("width_factor must be one of 1, 0.5, 0.25, 0.125");
  if (residual_blocks < 0) throw ConfigError("residual_blocks must be >= 0");
  if (height <= 0 || width <= 0) throw ConfigError("input size must be positive");
}

int scaled_channels(int base, double width_factor) {
  return std::max(1, static_cast<int>(std::floor(base * width_factor)));
}

void check_batch_shape(const torch::Tensor& x, const ArchConfig& arch, const char* who) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != arch.height || x.size(3) != arch.width) {
    std::ostringstream os;
    os << who << " expects [B, 3, " << arch.height << ", " << arch.width << "], got " << x.sizes();
    throw DimensionError(os.str());
  }
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  conv1 = register_module("conv1", nn::Conv2d(conv_opts(channels, channels, 3, 1, 1)));
  norm1 = register_module("norm1", make_norm(channels));
  conv2 = register_module("conv2", nn::Conv2d(conv_opts(channels, channels, 3, 1, 1)));
  norm2 = register_module("norm2", make_norm(channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(norm1(conv1(x)));
  return x + norm2(conv2(h));
}

GeneratorImpl::GeneratorImpl(const ArchConfig& a) : arch(a) {
  arch.validate();
  const auto [c1, c2] = generator_widths(arch);
  down1 = register_module("down1", nn::Conv2d(conv_opts(3, c1, 3, 2, 1)));
  norm1 = register_module("norm1", make_norm(c1));
  down2 = register_module("down2", nn::Conv2d(conv_opts(c1, c2, 3, 2, 1)));
  norm2 = register_module("norm2", make_norm(c2));
  blocks = register_module("blocks", nn::ModuleList());
  for (int i = 0; i < arch.residual_blocks; ++i) blocks->push_back(ResidualBlock(c2));
  // Stride-2 transposed convs with output padding 1 exactly double each side.
  up1 = register_module(
      "up1", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c2, c1, 3).stride(2).padding(1).output_padding(1)));
  norm3 = register_module("norm3", make_norm(c1));
  up2 = register_module(
      "up2", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c1, 3, 3).stride(2).padding(1).output_padding(1)));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
  check_batch_shape(x, arch, "generator");
  auto h = torch::relu(norm1(down1(x)));
  h = torch::relu(norm2(down2(h)));
  for (const auto& block : *blocks) h = block->as<ResidualBlock>()->forward(h);
  h = torch::relu(norm3(up1(h)));
  return torch::tanh(up2(h));
}

DiscriminatorImpl::DiscriminatorImpl(const ArchConfig& a) : arch(a) {
  arch.validate();
  const auto c = discriminator_widths(arch);
  conv1 = register_module("conv1", nn::Conv2d(conv_opts(3, c[0], 4, 2, 1)));
  norm1 = register_module("norm1", make_norm(c[0]));
  conv2 = register_module("conv2", nn::Conv2d(conv_opts(c[0], c[1], 4, 2, 1)));
  norm2 = register_module("norm2", make_norm(c[1]));
  conv3 = register_module("conv3", nn::Conv2d(conv_opts(c[1], c[2], 4, 2, 1)));
  norm3 = register_module("norm3", make_norm(c[2]));
  conv4 = register_module("conv4", nn::Conv2d(conv_opts(c[2], 1, 4, 1, 1)));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
  check_batch_shape(x, arch, "discriminator");
  auto h = torch::leaky_relu(norm1(conv1(x)), 0.2);
  h = torch::leaky_relu(norm2(conv2(h)), 0.2);
  h = torch::leaky_relu(norm3(conv3(h)), 0.2);
  return conv4(h).mean({1, 2, 3});
}

std::vector<std::pair<int, int>> PredictorImpl::feature_sizes(int height, int width) {
  std::vector<std::pair<int, int>> sizes{{height, width}};
  const int kernels[5] = {5, 5, 5, 3, 3};
  const int strides[5] = {2, 2, 2, 1, 1};
  for (int i = 0; i < 5; ++i) {
    const auto [h, w] = sizes.back();
    sizes.emplace_back(conv_out(h, kernels[i], strides[i]), conv_out(w, kernels[i], strides[i]));
  }
  return sizes;
}

std::int64_t PredictorImpl::flatten_size() const {
  const auto last = feature_sizes(arch.height, arch.width).back();
  return static_cast<std::int64_t>(last.first) * last.second * predictor_widths(arch)[4];
}

PredictorImpl::PredictorImpl(const ArchConfig& a) : arch(a) {
  arch.validate();
  const auto last = feature_sizes(arch.height, arch.width).back();
  if (last.first < 1 || last.second < 1) {
    throw DimensionError("input too small for the predictor convolutions");
  }
  const auto c = predictor_widths(arch);
  conv1 = register_module("conv1", nn::Conv2d(conv_opts(3, c[0], 5, 2, 0)));
  conv2 = register_module("conv2", nn::Conv2d(conv_opts(c[0], c[1], 5, 2, 0)));
  conv3 = register_module("conv3", nn::Conv2d(conv_opts(c[1], c[2], 5, 2, 0)));
  conv4 = register_module("conv4", nn::Conv2d(conv_opts(c[2], c[3], 3, 1, 0)));
  conv5 = register_module("conv5", nn::Conv2d(conv_opts(c[3], c[4], 3, 1, 0)));
  fc1 = register_module("fc1", nn::Linear(flatten_size(), 100));
  fc2 = register_module("fc2", nn::Linear(100, 50));
  fc3 = register_module("fc3", nn::Linear(50, 10));
  fc4 = register_module("fc4", nn::Linear(10, 1));
}

torch::Tensor PredictorImpl::forward(const torch::Tensor& x) {
  check_batch_shape(x, arch, "predictor");
  auto h = torch::relu(conv1(x));
  h = torch::relu(conv2(h));
  h = torch::relu(conv3(h));
  h = torch::relu(conv4(h));
  h = torch::relu(conv5(h));
  h = h.flatten(1);
  h = torch::relu(fc1(h));
  h = torch::relu(fc2(h));
  h = torch::relu(fc3(h));
  return fc4(h).squeeze(1);
}

void init_params(nn::Module& module, Role role, std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto rng = make_rng(seed, "init:" + role_name(role));
  for (auto& item : module.named_parameters(true)) {
    auto& p = item.value();
    const auto& name = item.key();
    const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
    if (is_bias) {
      p.zero_();
    } else if (p.dim() == 1) {
      p.fill_(1.0);  // instance-norm scale
    } else {
      // The predictor has no normalization layers; at 0.02 its output collapses
      // onto the final bias and never trains, so its hidden layers get a fan-in
      // scale instead. The linear output layer keeps 0.02.
      const double fan_in = static_cast<double>(p.numel() / p.size(0));
      const bool hidden = name.rfind("fc4", 0) != 0;
      const double std = role == Role::Predictor && hidden ? std::sqrt(2.0 / fan_in) : 0.02;
      std::vector<double> values(static_cast<std::size_t>(p.numel()));
      for (auto& v : values) {
        double z;
        do {
          z = standard_normal(rng);
        } while (std::abs(z) > 2.0);
        v = std * z;
      }
      p.copy_(torch::tensor(values, torch::kFloat64).view(p.sizes()));
    }
  }
}

Generator make_generator(const ArchConfig& arch, std::uint64_t seed) {
  Generator g(arch);
  init_params(*g, Role::Generator, seed);
  return g;
}

Discriminator make_discriminator(const ArchConfig& arch, std::uint64_t seed) {
  Discriminator d(arch);
  init_params(*d, Role::Discriminator, seed);
  return d;
}

Predictor make_predictor(const ArchConfig& arch, std::uint64_t seed) {
  Predictor p(arch);
  init_params(*p, Role::Predictor, seed);
  return p;
}

Generator clone(const Generator& g) { return clone_into(Generator(g->arch), *g); }
Discriminator clone(const Discriminator& d) { return clone_into(Discriminator(d->arch), *d); }
Predictor clone(const Predictor& p) { return clone_into(Predictor(p->arch), *p); }

std::vector<torch::Tensor> parameter_list(const nn::Module& module) { return module.parameters(true); }

std::vector<std::pair<std::string, std::vector<std::int64_t>>> parameter_manifest(Role role, const ArchConfig& arch) {
  arch.validate();
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> m;
  auto conv = [&](const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k) {
    m.push_back({name + ".weight", {out, in, k, k}});
    m.push_back({name + ".bias", {out}});
  };
  auto deconv = [&](const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k) {
    m.push_back({name + ".weight", {in, out, k, k}});
    m.push_back({name + ".bias", {out}});
  };
  auto norm = [&](const std::string& name, std::int64_t c) {
    m.push_back({name + ".weight", {c}});
    m.push_back({name + ".bias", {c}});
  };
  switch (role) {
    case Role::Generator: {
      const auto [c1, c2] = generator_widths(arch);
      conv("down1", 3, c1, 3);
      norm("norm1", c1);
      conv("down2", c1, c2, 3);
      norm("norm2", c2);
      for (int i = 0; i < arch.residual_blocks; ++i) {
        const auto prefix = "blocks." + std::to_string(i) + ".";
        conv(prefix + "conv1", c2, c2, 3);
        norm(prefix + "norm1", c2);
        conv(prefix + "conv2", c2, c2, 3);
        norm(prefix + "norm2", c2);
      }
      deconv("up1", c2, c1, 3);
      norm("norm3", c1);
      deconv("up2", c1, 3, 3);
      break;
    }
    case Role::Discriminator: {
      const auto c = discriminator_widths(arch);
      conv("conv1", 3, c[0], 4);
      norm("norm1", c[0]);
      conv("conv2", c[0], c[1], 4);
      norm("norm2", c[1]);
      conv("conv3", c[1], c[2], 4);
      norm("norm3", c[2]);
      conv("conv4", c[2], 1, 4);
      break;
    }
    case Role::Predictor: {
      const auto c = predictor_widths(arch);
      conv("conv1", 3, c[0], 5);
      conv("conv2", c[0], c[1], 5);
      conv("conv3", c[1], c[2], 5);
      conv("conv4", c[2], c[3], 3);
      conv("conv5", c[3], c[4], 3);
      const auto last = PredictorImpl::feature_sizes(arch.height, arch.width).back();
      const std::int64_t flat = static_cast<std::int64_t>(last.first) * last.second * c[4];
      const std::int64_t dims[5] = {flat, 100, 50, 10, 1};
      for (int i = 0; i < 4; ++i) {
        m.push_back({"fc" + std::to_string(i + 1) + ".weight", {dims[i + 1], dims[i]}});
        m.push_back({"fc" + std::to_string(i + 1) + ".bias", {dims[i + 1]}});
      }
      break;
    }
  }
  return m;
}

}  // namespace dudrive

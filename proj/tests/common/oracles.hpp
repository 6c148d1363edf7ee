#pragma once

// Reference implementations used by the unit and acceptance tests. Everything
// here is written with explicit loops over plain double arrays so it shares no
// code path with the library's torch-based implementation.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dudrive/geometry.hpp"
#include "dudrive/models.hpp"
#include "dudrive/random.hpp"

namespace oracle {

// Dense C x H x W volume.
struct Volume {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Volume() = default;
  Volume(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_ * h_ * w_), 0.0) {}
  double& at(int ch, int y, int x) { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
  double at(int ch, int y, int x) const { return v[static_cast<std::size_t>((ch * h + y) * w + x)]; }
};

// Copies a tensor into a flat row-major vector.
inline std::vector<double> flat(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous();
  const double* p = c.data_ptr<double>();
  return std::vector<double>(p, p + c.numel());
}

inline Volume from_tensor(const torch::Tensor& image) {
  Volume out(static_cast<int>(image.size(0)), static_cast<int>(image.size(1)), static_cast<int>(image.size(2)));
  out.v = flat(image);
  return out;
}

using Params = std::map<std::string, std::vector<double>>;

inline Params params_of(const torch::nn::Module& m) {
  Params p;
  for (const auto& item : m.named_parameters(true)) p[item.key()] = flat(item.value());
  return p;
}

// weight layout [out][in][k][k]
inline Volume conv2d(const Volume& x, const std::vector<double>& wgt, const std::vector<double>& bias, int out_c, int k,
                     int stride, int pad) {
  const int oh = (x.h + 2 * pad - k) / stride + 1;
  const int ow = (x.w + 2 * pad - k) / stride + 1;
  Volume y(out_c, oh, ow);
  for (int o = 0; o < out_c; ++o)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = bias[static_cast<std::size_t>(o)];
        for (int c = 0; c < x.c; ++c)
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
              const int yy = i * stride + a - pad;
              const int xx = j * stride + b - pad;
              if (yy < 0 || yy >= x.h || xx < 0 || xx >= x.w) continue;
              acc += wgt[static_cast<std::size_t>(((o * x.c + c) * k + a) * k + b)] * x.at(c, yy, xx);
            }
        y.at(o, i, j) = acc;
      }
  return y;
}

// Transposed convolution by scattering every input pixel; weight layout [in][out][k][k].
inline Volume conv_transpose2d(const Volume& x, const std::vector<double>& wgt, const std::vector<double>& bias,
                               int out_c, int k, int stride, int pad, int out_pad) {
  const int oh = (x.h - 1) * stride - 2 * pad + k + out_pad;
  const int ow = (x.w - 1) * stride - 2 * pad + k + out_pad;
  Volume y(out_c, oh, ow);
  for (int o = 0; o < out_c; ++o)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) y.at(o, i, j) = bias[static_cast<std::size_t>(o)];
  for (int c = 0; c < x.c; ++c)
    for (int i = 0; i < x.h; ++i)
      for (int j = 0; j < x.w; ++j)
        for (int o = 0; o < out_c; ++o)
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
              const int yy = i * stride + a - pad;
              const int xx = j * stride + b - pad;
              if (yy < 0 || yy >= oh || xx < 0 || xx >= ow) continue;
              y.at(o, yy, xx) += wgt[static_cast<std::size_t>(((c * out_c + o) * k + a) * k + b)] * x.at(c, i, j);
            }
  return y;
}

// Biased per-channel statistics, eps 1e-5, then scale and shift.
inline Volume instance_norm(const Volume& x, const std::vector<double>& gamma, const std::vector<double>& beta) {
  Volume y = x;
  const double n = static_cast<double>(x.h * x.w);
  for (int c = 0; c < x.c; ++c) {
    double mean = 0;
    for (int i = 0; i < x.h; ++i)
      for (int j = 0; j < x.w; ++j) mean += x.at(c, i, j);
    mean /= n;
    double var = 0;
    for (int i = 0; i < x.h; ++i)
      for (int j = 0; j < x.w; ++j) var += (x.at(c, i, j) - mean) * (x.at(c, i, j) - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (int i = 0; i < x.h; ++i)
      for (int j = 0; j < x.w; ++j)
        y.at(c, i, j) = (x.at(c, i, j) - mean) * inv * gamma[static_cast<std::size_t>(c)] + beta[static_cast<std::size_t>(c)];
  }
  return y;
}

inline Volume relu(Volume x) {
  for (auto& a : x.v) a = a > 0 ? a : 0;
  return x;
}

inline Volume leaky(Volume x, double slope) {
  for (auto& a : x.v) a = a > 0 ? a : slope * a;
  return x;
}

inline int channels_of(const Params& p, const std::string& bias_name) {
  return static_cast<int>(p.at(bias_name).size());
}

inline Volume generator(const Params& p, const Volume& x, int residual_blocks) {
  auto conv = [&](const Volume& in, const std::string& n, int k, int s, int pad) {
    return conv2d(in, p.at(n + ".weight"), p.at(n + ".bias"), channels_of(p, n + ".bias"), k, s, pad);
  };
  auto norm = [&](const Volume& in, const std::string& n) { return instance_norm(in, p.at(n + ".weight"), p.at(n + ".bias")); };
  auto h = relu(norm(conv(x, "down1", 3, 2, 1), "norm1"));
  h = relu(norm(conv(h, "down2", 3, 2, 1), "norm2"));
  for (int b = 0; b < residual_blocks; ++b) {
    const auto pre = "blocks." + std::to_string(b) + ".";
    auto r = relu(norm(conv(h, pre + "conv1", 3, 1, 1), pre + "norm1"));
    r = norm(conv(r, pre + "conv2", 3, 1, 1), pre + "norm2");
    for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += r.v[i];
  }
  h = conv_transpose2d(h, p.at("up1.weight"), p.at("up1.bias"), channels_of(p, "up1.bias"), 3, 2, 1, 1);
  h = relu(norm(h, "norm3"));
  h = conv_transpose2d(h, p.at("up2.weight"), p.at("up2.bias"), 3, 3, 2, 1, 1);
  for (auto& a : h.v) a = std::tanh(a);
  return h;
}

inline double discriminator(const Params& p, const Volume& x) {
  auto conv = [&](const Volume& in, const std::string& n, int k, int s, int pad) {
    return conv2d(in, p.at(n + ".weight"), p.at(n + ".bias"), channels_of(p, n + ".bias"), k, s, pad);
  };
  auto norm = [&](const Volume& in, const std::string& n) { return instance_norm(in, p.at(n + ".weight"), p.at(n + ".bias")); };
  auto h = leaky(norm(conv(x, "conv1", 4, 2, 1), "norm1"), 0.2);
  h = leaky(norm(conv(h, "conv2", 4, 2, 1), "norm2"), 0.2);
  h = leaky(norm(conv(h, "conv3", 4, 2, 1), "norm3"), 0.2);
  h = conv(h, "conv4", 4, 1, 1);
  double s = 0;
  for (double a : h.v) s += a;
  return s / static_cast<double>(h.v.size());
}

inline std::vector<double> linear(const std::vector<double>& x, const std::vector<double>& w, const std::vector<double>& b) {
  std::vector<double> y(b);
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < b.size(); ++o)
    for (std::size_t i = 0; i < in; ++i) y[o] += w[o * in + i] * x[i];
  return y;
}

inline double predictor(const Params& p, const Volume& x) {
  auto conv = [&](const Volume& in, const std::string& n, int k, int s) {
    return relu(conv2d(in, p.at(n + ".weight"), p.at(n + ".bias"), channels_of(p, n + ".bias"), k, s, 0));
  };
  auto h = conv(x, "conv1", 5, 2);
  h = conv(h, "conv2", 5, 2);
  h = conv(h, "conv3", 5, 2);
  h = conv(h, "conv4", 3, 1);
  h = conv(h, "conv5", 3, 1);
  std::vector<double> f = h.v;  // channel-major flatten, same as torch's flatten of [C,H,W]
  for (int l = 1; l <= 3; ++l) {
    const auto n = "fc" + std::to_string(l);
    f = linear(f, p.at(n + ".weight"), p.at(n + ".bias"));
    for (auto& a : f) a = a > 0 ? a : 0;
  }
  return linear(f, p.at("fc4.weight"), p.at("fc4.bias"))[0];
}

// Scalar Adam with bias correction, written out step by step.
struct ScalarAdam {
  double lr, b1, b2, eps;
  double m = 0, v = 0;
  int t = 0;

  double step(double w, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return w - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

// Frames with random pixels in [-0.9, 0.9] and random labels consistent with geom.
inline dudrive::FrameSet random_frames(int n, int h, int w, std::uint64_t seed, const std::string& domain = "test",
                                       const dudrive::VehicleGeometry& geom = {}) {
  dudrive::FrameSet s;
  s.domain_id = domain;
  s.geometry = geom;
  auto rng = dudrive::make_rng(seed, "random_frames");
  std::vector<float> pix(static_cast<std::size_t>(n) * 3 * h * w);
  for (auto& a : pix) a = static_cast<float>(0.9 * (2.0 * dudrive::uniform01(rng) - 1.0));
  s.images = torch::tensor(pix).view({n, 3, h, w});
  for (int i = 0; i < n; ++i) {
    const double u = 0.02 * (2.0 * dudrive::uniform01(rng) - 1.0);
    s.inv_radius.push_back(u);
    s.speed_mps.push_back(10.0);
    s.steering_rad.push_back(dudrive::inv_radius_to_steering(u, 10.0, geom));
    s.weight.push_back(1.0);
  }
  return s;
}

// Central finite-difference check of d loss / d param over `count` randomly
// chosen scalar entries of `params`. Returns the worst relative error;
// entries where both derivatives are below `floor` count as agreeing.
struct GradCheck {
  double worst_rel = 0.0;
  int checked = 0;
};

inline GradCheck finite_difference_check(const std::vector<torch::Tensor>& params,
                                         const std::function<torch::Tensor()>& loss_fn, int count, std::uint64_t seed,
                                         double step = 1e-3, double floor = 1e-7) {
  for (auto& p : params) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
  auto loss = loss_fn();
  auto grads = torch::autograd::grad({loss}, params, {}, false, false, true);
  std::int64_t total = 0;
  for (const auto& p : params) total += p.numel();
  auto rng = dudrive::make_rng(seed, "gradcheck");
  GradCheck out;
  torch::NoGradGuard guard;
  for (int n = 0; n < count; ++n) {
    auto flat_index = static_cast<std::int64_t>(dudrive::uniform_index(rng, static_cast<std::uint64_t>(total)));
    std::size_t k = 0;
    while (flat_index >= params[k].numel()) flat_index -= params[k++].numel();
    auto view = params[k].view({-1});
    const double orig = view[flat_index].item<double>();
    view[flat_index] = orig + step;
    const double up = loss_fn().item<double>();
    view[flat_index] = orig - step;
    const double down = loss_fn().item<double>();
    view[flat_index] = orig;
    const double numeric = (up - down) / (2 * step);
    const double analytic = grads[k].defined() ? grads[k].view({-1})[flat_index].item<double>() : 0.0;
    const double scale = std::max(std::abs(numeric), std::abs(analytic));
    const double rel = scale < floor ? 0.0 : std::abs(numeric - analytic) / scale;
    out.worst_rel = std::max(out.worst_rel, rel);
    ++out.checked;
  }
  return out;
}

}  // namespace oracle

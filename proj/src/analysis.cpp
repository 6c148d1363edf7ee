#include "dudrive/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "dudrive/errors.hpp"
#include "dudrive/geometry.hpp"
#include "dudrive/random.hpp"

namespace dudrive {

EvalReport mae_sd(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw InvalidInput("mae_sd: length mismatch");
  if (pred.empty()) throw InvalidInput("mae_sd: empty input");
  const auto n = static_cast<double>(pred.size());
  std::vector<double> err(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    err[i] = rad_to_deg(std::abs(pred[i] - truth[i]));
    sum += err[i];
  }
  const double mae = sum / n;
  double ss = 0.0;
  for (double e : err) ss += (e - mae) * (e - mae);
  EvalReport r;
  r.mae_deg = mae;
  r.sd_deg = std::sqrt(ss / n);
  r.n = pred.size();
  return r;
}

double total_variance(const torch::Tensor& images, int n, std::uint64_t seed) {
  if (images.dim() < 1 || images.size(0) < 2) throw InvalidInput("total_variance needs at least two images");
  auto flat = images.reshape({images.size(0), -1}).to(torch::kFloat64);
  if (n >= 2 && flat.size(0) > n) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(flat.size(0)));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
    auto rng = make_rng(seed, "total_variance");
    shuffle(idx, rng);
    idx.resize(static_cast<std::size_t>(n));
    flat = flat.index_select(0, torch::tensor(idx, torch::kInt64));
  }
  return flat.var(0, /*unbiased=*/true).sum().item<double>();
}

double pearson(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw InvalidInput("pearson needs at least two points");
  const auto n = static_cast<double>(points.size());
  double mx = 0, my = 0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (const auto& [x, y] : points) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
    syy += (y - my) * (y - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw InvalidInput("pearson: degenerate variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double diversity_score(const torch::Tensor& images) {
  if (images.dim() < 1 || images.size(0) < 2) throw InvalidInput("diversity_score needs at least two images");
  auto flat = images.reshape({images.size(0), -1}).to(torch::kFloat64);
  const auto dim = static_cast<double>(flat.size(1));
  // Direct differences (compute_mode 2) so identical images give exactly zero.
  auto dist = torch::cdist(flat.unsqueeze(0), flat.unsqueeze(0), 2.0, 2).squeeze(0);
  const auto b = flat.size(0);
  const double pairs = static_cast<double>(b) * static_cast<double>(b - 1) / 2.0;
  const double upper = dist.triu(1).sum().item<double>();
  return upper / pairs / std::sqrt(dim);
}

double percent_decrease(double before, double after) { return 100.0 * (before - after) / before; }

}  // namespace dudrive

#pragma once

// Evaluation metrics and the image-statistics analysis.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dudrive {

struct EvalReport {
  double mae_deg = 0.0;
  double sd_deg = 0.0;  // population SD of the absolute errors
  std::size_t n = 0;
  std::string domain_id;
  std::string model_tag;
};

/// Absolute steering errors converted to degrees; MAE and population SD.
/// Throws InvalidInput on empty or mismatched inputs.
EvalReport mae_sd(const std::vector<double>& pred_theta_rad, const std::vector<double>& true_theta_rad);

/// Trace of the sample covariance (n - 1 normalization) of flattened images.
/// images: [N, ...]. When N > n, n images are drawn without replacement using
/// seed. Throws InvalidInput for fewer than two images.
double total_variance(const torch::Tensor& images, int n = 50, std::uint64_t seed = 0);

/// Pearson correlation of (x, y) points. Throws InvalidInput when either
/// coordinate has zero variance or fewer than two points are given.
double pearson(const std::vector<std::pair<double, double>>& points);

/// Correlation between percentage entropy-proxy decrease and percentage MAE decrease.
inline double entropy_mae_correlation(const std::vector<std::pair<double, double>>& points) {
  return pearson(points);
}

/// Mean pairwise Euclidean distance between flattened images divided by
/// sqrt(dimension), i.e. the mean RMS difference. Zero iff all images are equal.
double diversity_score(const torch::Tensor& images);

/// 100 * (before - after) / before.
double percent_decrease(double before, double after);

}  // namespace dudrive

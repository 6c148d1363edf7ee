#pragma once

// Steering geometry, frame preprocessing, augmentation and dataset ingestion.
//
// Image tensors are float32 in channel-first layout [3, H, W] (batches
// [B, 3, H, W]) with values in [-1, 1]. Raw decoded images are uint8 [H, W, 3]
// in RGB order.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dudrive {

inline constexpr int kFrameHeight = 80;
inline constexpr int kFrameWidth = 160;
inline constexpr int kCropHeight = 160;
inline constexpr int kCropWidth = 320;
inline constexpr double kDefaultFilterDeg = 200.0;

/// Ackermann parameters of the data-capture vehicle.
struct VehicleGeometry {
  double wheelbase_m = 2.7;
  double steer_ratio = 15.3;
  double slip_coeff = 0.0;  // s^2/m^2

  /// Throws InvalidInput unless wheelbase > 0, steer_ratio > 0, slip >= 0 (all finite).
  void validate() const;

  bool operator==(const VehicleGeometry&) const = default;
};

/// Benchmark constants for the synthetic world. Arbitrary but fixed.
VehicleGeometry synthetic_geometry();

/// u = theta / (d_w * K_s * (1 + K_slip * v^2)).
double steering_to_inv_radius(double theta_rad, double speed_mps, const VehicleGeometry& geom);

/// theta = d_w * K_s * (1 + K_slip * v^2) * u.
double inv_radius_to_steering(double inv_radius, double speed_mps, const VehicleGeometry& geom);

inline double deg_to_rad(double deg) { return deg * (3.14159265358979323846 / 180.0); }
inline double rad_to_deg(double rad) { return rad * (180.0 / 3.14159265358979323846); }

/// Maps 8-bit pixel values to [-1, 1] via p / 127.5 - 1. Accepts any integral or
/// floating tensor holding values in [0, 255].
torch::Tensor normalize_pixels(const torch::Tensor& pixels);

/// Inverse of normalize_pixels, rounding to the nearest 8-bit level. [3,H,W] -> uint8 [H,W,3].
torch::Tensor to_raw_image(const torch::Tensor& frame);

/// Bottom-160-row, horizontally centred 320-column crop, bilinear resize to
/// 80x160 and normalization. raw: uint8 [H0, W0, 3]. Returns float [3, 80, 160].
torch::Tensor preprocess(const torch::Tensor& raw);

struct LabeledFrame {
  torch::Tensor image;  // [3, 80, 160]
  double steering_rad = 0.0;
  double speed_mps = 0.0;
  double inv_radius = 0.0;
  std::string domain_id;
  double weight = 1.0;
};

/// Mirror about the vertical axis and negate the steering labels.
LabeledFrame flip_augment(const LabeledFrame& frame);

/// A dataset held in memory: one image tensor plus per-frame labels.
struct FrameSet {
  std::string domain_id;
  VehicleGeometry geometry;
  torch::Tensor images;  // [N, 3, H, W] float32
  std::vector<double> steering_rad;
  std::vector<double> speed_mps;
  std::vector<double> inv_radius;
  std::vector<double> weight;

  std::size_t size() const { return steering_rad.size(); }
  bool empty() const { return size() == 0; }

  LabeledFrame frame(std::size_t i) const;
  void push_back(const LabeledFrame& f);

  /// Frames at the given indices, in the given order.
  FrameSet subset(const std::vector<std::int64_t>& indices) const;

  /// Throws DatasetError when label vectors and images disagree in length or
  /// an inv_radius label is inconsistent with the geometry.
  void check_consistent() const;
};

/// Concatenates the frames of `b` after `a`. Both must share a frame shape.
FrameSet concat(const FrameSet& a, const FrameSet& b);

/// Materialized flip augmentation: the original frames followed by their mirrors (2N frames).
FrameSet with_flips(const FrameSet& set);

/// Seed-stable split into (train, held_out), with held_out taking
/// round(fraction * N) frames. Both halves keep the original relative order.
std::pair<FrameSet, FrameSet> split_holdout(const FrameSet& set, double fraction, std::uint64_t seed);

struct IndexEntry {
  std::string filename;
  double steering_deg = 0.0;
  double speed_mps = 0.0;
};

struct DatasetIndex {
  std::filesystem::path root;  // directory holding the index; filenames are relative to it
  std::vector<IndexEntry> entries;
  std::string domain_id;
  VehicleGeometry geometry;
};

/// Parses a `filename,steering_deg,speed_mps` CSV and drops rows with
/// |steering_deg| > filter_deg. Throws DatasetError for an unreadable file, a
/// malformed row (row number in the message) or zero surviving rows.
DatasetIndex ingest(const std::filesystem::path& index_file, const VehicleGeometry& geom,
                    double filter_deg = kDefaultFilterDeg, std::string domain_id = {});

/// Decodes every referenced image. Frames already at 80x160 are only
/// normalized; larger frames go through preprocess().
FrameSet load_frames(const DatasetIndex& index);

}  // namespace dudrive

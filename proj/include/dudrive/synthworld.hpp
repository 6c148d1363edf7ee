#pragma once

// Procedural road scenes rendered either as flat "virtual" frames or as
// cluttered "real" frames. Both renderings share the lane geometry, so the
// steering label of a scene is independent of how it is drawn.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "dudrive/geometry.hpp"

namespace dudrive {

inline constexpr double kMaxCurvature = 0.05;   // 1/m
inline constexpr double kMaxLaneOffset = 1.0;   // m
inline constexpr double kOffsetGain = 0.02;     // 1/m^2, corrective steering gain
inline constexpr double kSyntheticSpeed = 10.0; // m/s

struct SceneParams {
  double curvature = 0.0;    // signed road curvature, positive bends right
  double lane_offset = 0.0;  // lateral position of the lane centre relative to the car, positive right
  double lane_width_m = 3.6;
  double horizon_frac = 0.35;
  std::uint64_t seed = 0;
  bool mirrored = false;  // nuisance layout is reflected; toggled by mirror_scene

  void validate() const;
  bool operator==(const SceneParams&) const = default;
};

SceneParams sample_scene(std::uint64_t rng_seed);

/// Negates curvature and offset and reflects the nuisance layout.
SceneParams mirror_scene(const SceneParams& scene);

/// Inverse turning radius the corrective policy steers for this scene.
inline double scene_inv_radius(const SceneParams& s) { return s.curvature + kOffsetGain * s.lane_offset; }

using Rgb = std::array<float, 3>;

struct VirtualStyle {
  std::string style_id;
  Rgb sky, ground, road, marking;
};

/// Flat, simulator-like palettes. The two stand in for two different simulators.
const VirtualStyle& virtual_torcs();
const VirtualStyle& virtual_carla();

struct RealStyle {
  std::string style_id;
  int version = 1;
  double texture_noise_amp = 0.0;
  int shadow_count = 0;
  int clutter_count = 0;
  double brightness_jitter = 0.0;
  double sensor_noise_amp = 0.0;
  bool night = false;  // headlight falloff and emissive clutter
  Rgb sky_top, sky_horizon, ground, road, marking, tint;
  std::vector<Rgb> clutter_colors;
};

/// "Daylight clutter": textured asphalt and grass, tree shadows, roadside objects.
const RealStyle& style_a();
/// "Night tint": dark blue cast, headlight falloff, sensor noise, street lights.
const RealStyle& style_b();

using DomainStyle = std::variant<VirtualStyle, RealStyle>;

std::string style_id(const DomainStyle& style);
bool is_virtual(const DomainStyle& style);

/// Looks up a shipped style by id: virtual_torcs, virtual_carla, real_a, real_b.
DomainStyle style_by_id(const std::string& id);

torch::Tensor render_virtual(const SceneParams& scene, const VirtualStyle& style = virtual_torcs());
torch::Tensor render_real(const SceneParams& scene, const RealStyle& style);
torch::Tensor render(const SceneParams& scene, const DomainStyle& style);

struct RenderLayers {
  torch::Tensor image;           // [3, 80, 160]
  torch::Tensor visible_marking; // bool [80, 160], marking pixels not hidden by nuisance
};

RenderLayers render_real_layers(const SceneParams& scene, const RealStyle& style);

/// Analytic lane-marking coverage: a pixel is marked when at least half of its
/// 2x2 sample points fall on a marking.
torch::Tensor lane_marking_mask(const SceneParams& scene);

struct SynthDataset {
  FrameSet frames;
  std::vector<SceneParams> scenes;
};

/// n labeled frames of one style. Scene i uses sample_scene(mix_seed(seed, i)).
SynthDataset build_dataset(int n, const DomainStyle& style, const VehicleGeometry& geom, std::uint64_t seed);

/// Same as build_dataset but over explicit scenes.
SynthDataset build_dataset_from_scenes(const std::vector<SceneParams>& scenes, const DomainStyle& style,
                                       const VehicleGeometry& geom);

/// Writes PNG frames, `index.csv` (filename,steering_deg,speed_mps) and
/// `scenes.csv` (index,curvature,lane_offset,seed) into dir.
void write_dataset(const std::filesystem::path& dir, const SynthDataset& data);

}  // namespace dudrive

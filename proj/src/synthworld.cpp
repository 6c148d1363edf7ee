#include "dudrive/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dudrive/errors.hpp"
#include "dudrive/image_io.hpp"
#include "dudrive/random.hpp"

namespace dudrive {

namespace {

constexpr int H = kFrameHeight;
constexpr int W = kFrameWidth;
constexpr double kFocalPx = 80.0;
constexpr double kCameraHeight = 1.4;  // m
constexpr double kFarZ = 70.0;         // road drawn up to this depth
constexpr double kMarkingWidth = 0.25; // m
constexpr double kDashPeriod = 6.0;    // m
constexpr float kSub[2] = {-0.25f, 0.25f};

enum class Surface : std::uint8_t { Sky, Ground, Road, Marking };

struct Sample {
  Surface surface = Surface::Sky;
  double z = 0.0;  // depth on the ground plane
  double d = 0.0;  // lateral offset from the lane centre at that depth
};

/// Lane geometry of a scene as seen from one image sample. u is the horizontal
/// offset from the optical axis, y the row coordinate, both in pixels.
struct RoadModel {
  double curvature, offset, half_width, horizon_row, dash_phase;

  explicit RoadModel(const SceneParams& s)
      : curvature(s.curvature),
        offset(s.lane_offset),
        half_width(0.5 * s.lane_width_m),
        horizon_row(s.horizon_frac * H) {
    auto rng = make_rng(s.seed, "dash_phase");
    dash_phase = uniform01(rng) * kDashPeriod;
  }

  Sample classify(double u, double y) const {
    Sample out;
    const double dy = y - horizon_row;
    if (dy <= 0.0) return out;
    out.z = kFocalPx * kCameraHeight / dy;
    const double x = u * out.z / kFocalPx;
    const double centre = offset + 0.5 * curvature * out.z * out.z;
    out.d = x - centre;
    if (out.z > kFarZ) {
      out.surface = Surface::Ground;
      return out;
    }
    const double ad = std::abs(out.d);
    if (ad <= half_width) {
      const bool side_line = ad >= half_width - kMarkingWidth;
      const bool centre_dash = ad <= 0.5 * kMarkingWidth && std::fmod(out.z + dash_phase, kDashPeriod) < 0.5 * kDashPeriod;
      out.surface = (side_line || centre_dash) ? Surface::Marking : Surface::Road;
    } else {
      out.surface = Surface::Ground;
    }
    return out;
  }
};

double sample_u(int col, float sx) { return static_cast<double>(col) + 0.5 + sx - 0.5 * W; }
double sample_y(int row, float sy) { return static_cast<double>(row) + 0.5 + sy; }

/// Writes sample colours into the output as the pairwise sum over the 2x2
/// grid. Pairs run along x so a mirrored pixel sums the same terms.
template <typename ColorFn>
torch::Tensor supersample(ColorFn&& color) {
  auto img = torch::empty({3, H, W}, torch::kFloat32);
  auto acc = img.accessor<float, 3>();
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      Rgb s[2][2];
      for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i) s[j][i] = color(c, r, sample_u(c, kSub[i]), sample_y(r, kSub[j]));
      for (int ch = 0; ch < 3; ++ch) {
        const float top = s[0][0][ch] + s[0][1][ch];
        const float bottom = s[1][0][ch] + s[1][1][ch];
        acc[ch][r][c] = 0.25f * (top + bottom);
      }
    }
  }
  return img;
}

/// Colour in [0,1] -> normalized frame, quantized to 8-bit levels so frames
/// survive a PNG round trip unchanged.
torch::Tensor quantize(const torch::Tensor& unit_rgb) {
  auto levels = (unit_rgb.clamp(0.0f, 1.0f) * 255.0f).round();
  return normalize_pixels(levels).contiguous();
}

// Hash-based noise keyed on integer lattice points.
float lattice_noise(std::uint64_t seed, std::int64_t x, std::int64_t y) {
  const auto h = mix_seed(seed, (static_cast<std::uint64_t>(x) << 32) ^ static_cast<std::uint64_t>(y & 0xffffffff));
  return static_cast<float>(static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0);
}

/// Bilinear value noise with the given cell size in pixels, range [-1, 1].
float value_noise(std::uint64_t seed, double x, double y, double cell) {
  const double gx = x / cell, gy = y / cell;
  const auto x0 = static_cast<std::int64_t>(std::floor(gx));
  const auto y0 = static_cast<std::int64_t>(std::floor(gy));
  const float tx = static_cast<float>(gx - static_cast<double>(x0));
  const float ty = static_cast<float>(gy - static_cast<double>(y0));
  const float a = lattice_noise(seed, x0, y0), b = lattice_noise(seed, x0 + 1, y0);
  const float c = lattice_noise(seed, x0, y0 + 1), d = lattice_noise(seed, x0 + 1, y0 + 1);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

Rgb scale(const Rgb& c, float k) { return {c[0] * k, c[1] * k, c[2] * k}; }
Rgb mix(const Rgb& a, const Rgb& b, float t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

struct ShadowBox {
  double d0, d1, z0, z1;
};

struct ClutterObject {
  double z, d, half_width, height;
  Rgb color;
};

struct Lamp {
  double u, y, radius;
  Rgb color;
};

/// Per-frame nuisance layout, drawn from scene.seed xor the style id.
struct Nuisance {
  std::uint64_t seed;
  float gain;
  Rgb tint;
  std::vector<ShadowBox> shadows;
  std::vector<ClutterObject> objects;  // far to near
  std::vector<Lamp> lamps;

  Nuisance(const SceneParams& scene, const RealStyle& style, double horizon_row, double centre_offset,
           double curvature)
      : seed(scene.seed ^ hash_name(style.style_id)) {
    auto rng = make_rng(seed, "nuisance");
    gain = static_cast<float>(1.0 + style.brightness_jitter * (2.0 * uniform01(rng) - 1.0));
    for (int ch = 0; ch < 3; ++ch) tint[ch] = style.tint[ch] * static_cast<float>(1.0 + 0.06 * (2.0 * uniform01(rng) - 1.0));
    const double hw = 0.5 * scene.lane_width_m;
    for (int i = 0; i < style.shadow_count; ++i) {
      // Tree shadows: bands cast from one roadside across part of the lane.
      const double side = uniform01(rng) < 0.5 ? -1.0 : 1.0;
      const double reach = hw * (0.3 + 1.4 * uniform01(rng));
      const double z0 = 3.0 + 35.0 * uniform01(rng);
      const double depth = 0.6 + 3.0 * uniform01(rng);
      const double outer = side * (hw + 6.0);
      const double inner = side * (hw - reach);
      shadows.push_back({std::min(outer, inner), std::max(outer, inner), z0, z0 + depth});
    }
    for (int i = 0; i < style.clutter_count; ++i) {
      const double side = uniform01(rng) < 0.5 ? -1.0 : 1.0;
      ClutterObject o;
      o.z = 4.0 + 50.0 * uniform01(rng);
      o.d = side * (hw + 0.8 + 9.0 * uniform01(rng));
      o.half_width = 0.3 + 2.2 * uniform01(rng);
      o.height = 1.0 + 7.0 * uniform01(rng);
      const auto& palette = style.clutter_colors;
      o.color = palette.empty() ? Rgb{0.2f, 0.2f, 0.2f} : palette[uniform_index(rng, palette.size())];
      o.color = scale(o.color, static_cast<float>(0.8 + 0.4 * uniform01(rng)));
      if (style.night) {
        Lamp lamp;
        lamp.u = (centre_offset + 0.5 * curvature * o.z * o.z + o.d) / o.z * kFocalPx;
        lamp.y = horizon_row - kFocalPx * (o.height - kCameraHeight) / o.z;
        lamp.radius = 1.0 + 24.0 / o.z;
        lamp.color = o.color;
        lamps.push_back(lamp);
      } else {
        objects.push_back(o);
      }
    }
    std::sort(objects.begin(), objects.end(), [](const auto& a, const auto& b) { return a.z > b.z; });
  }
};

void check_style(const RealStyle& style) {
  if (style.texture_noise_amp < 0 || style.shadow_count < 0 || style.clutter_count < 0 || style.brightness_jitter < 0 ||
      style.sensor_noise_amp < 0) {
    throw InvalidInput("real style '" + style.style_id + "' has negative nuisance parameters");
  }
}

RenderLayers render_real_canonical(const SceneParams& scene, const RealStyle& style) {
  const RoadModel road(scene);
  const Nuisance nz(scene, style, road.horizon_row, road.offset, road.curvature);
  const double amp = style.texture_noise_amp;

  auto color = [&](int col, int row, double u, double y) -> Rgb {
    const Sample s = road.classify(u, y);
    const double px = u + 0.5 * W;
    Rgb out;
    if (s.surface == Surface::Sky) {
      const float t = static_cast<float>(std::clamp(y / road.horizon_row, 0.0, 1.0));
      out = mix(style.sky_top, style.sky_horizon, t);
      out = scale(out, 1.0f + static_cast<float>(0.3 * amp) * value_noise(nz.seed + 1, px, y, 16.0));
    } else {
      const float coarse = value_noise(nz.seed + 2, px, y, 9.0);
      const float fine = lattice_noise(nz.seed + 3, col, row);
      const float tex = static_cast<float>(amp) * (0.7f * coarse + 0.3f * fine);
      switch (s.surface) {
        case Surface::Ground: out = scale(style.ground, 1.0f + 2.0f * tex); break;
        case Surface::Road: out = scale(style.road, 1.0f + tex); break;
        default: out = scale(style.marking, 1.0f + 0.5f * tex); break;
      }
      for (const auto& b : nz.shadows) {
        if (s.d >= b.d0 && s.d <= b.d1 && s.z >= b.z0 && s.z <= b.z1) {
          out = scale(out, 0.5f);
          break;
        }
      }
      if (style.night) {
        // Headlight pool: bright near the car and along the lane, dark beyond.
        const double spread = 2.0 + 0.25 * s.z;
        const double lit = 0.25 + 1.6 * std::exp(-s.z / 14.0) * std::exp(-(s.d * s.d) / (2.0 * spread * spread));
        const double boost = s.surface == Surface::Marking ? 1.4 : 1.0;
        out = scale(out, static_cast<float>(lit * boost));
      }
    }
    // Roadside objects hide only non-road surfaces.
    if (s.surface == Surface::Sky || s.surface == Surface::Ground) {
      for (const auto& o : nz.objects) {
        const double centre_x = road.offset + 0.5 * road.curvature * o.z * o.z + o.d;
        const double x = u * o.z / kFocalPx;
        if (std::abs(x - centre_x) > o.half_width) continue;
        const double base = road.horizon_row + kFocalPx * kCameraHeight / o.z;
        const double top = road.horizon_row + kFocalPx * (kCameraHeight - o.height) / o.z;
        if (y < top || y > base) continue;
        const float shade = static_cast<float>(0.75 + 0.25 * (y - top) / std::max(base - top, 1e-6));
        out = scale(o.color, shade * (1.0f + static_cast<float>(amp) * lattice_noise(nz.seed + 4, col, row)));
      }
      for (const auto& l : nz.lamps) {
        const double du = u - l.u, dv = y - l.y;
        const double r2 = (du * du + dv * dv) / (l.radius * l.radius);
        if (r2 < 4.0) out = mix(out, l.color, static_cast<float>(std::exp(-r2)));
      }
    }
    return out;
  };

  auto unit = supersample(color);

  // Objects skip road surfaces, so every marking pixel stays visible.
  auto visible = lane_marking_mask(scene);

  for (int ch = 0; ch < 3; ++ch) unit[ch].mul_(nz.gain * nz.tint[ch]);
  if (style.sensor_noise_amp > 0) {
    auto acc = unit.accessor<float, 3>();
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const float n = static_cast<float>(style.sensor_noise_amp) * lattice_noise(nz.seed + 5, c, r);
        for (int ch = 0; ch < 3; ++ch) acc[ch][r][c] += n * (0.8f + 0.2f * static_cast<float>(ch));
      }
  }
  return {quantize(unit), visible};
}

}  // namespace

void SceneParams::validate() const {
  if (!std::isfinite(curvature) || std::abs(curvature) > kMaxCurvature) throw InvalidInput("curvature out of range");
  if (!std::isfinite(lane_offset) || std::abs(lane_offset) > kMaxLaneOffset) throw InvalidInput("lane offset out of range");
  if (!(lane_width_m > 0.0)) throw InvalidInput("lane width must be > 0");
  if (!(horizon_frac > 0.0 && horizon_frac < 1.0)) throw InvalidInput("horizon fraction must be in (0, 1)");
}

SceneParams sample_scene(std::uint64_t rng_seed) {
  auto rng = make_rng(rng_seed, "scene");
  SceneParams s;
  s.curvature = std::clamp(0.015 * standard_normal(rng), -kMaxCurvature, kMaxCurvature);
  s.lane_offset = std::clamp(0.4 * standard_normal(rng), -kMaxLaneOffset, kMaxLaneOffset);
  s.seed = rng_seed;
  return s;
}

SceneParams mirror_scene(const SceneParams& scene) {
  SceneParams m = scene;
  m.curvature = -scene.curvature;
  m.lane_offset = -scene.lane_offset;
  m.mirrored = !scene.mirrored;
  return m;
}

const VirtualStyle& virtual_torcs() {
  static const VirtualStyle s{"virtual_torcs",
                              {0.55f, 0.75f, 0.95f},
                              {0.35f, 0.60f, 0.30f},
                              {0.42f, 0.42f, 0.44f},
                              {0.95f, 0.95f, 0.95f}};
  return s;
}

const VirtualStyle& virtual_carla() {
  static const VirtualStyle s{"virtual_carla",
                              {0.78f, 0.80f, 0.84f},
                              {0.58f, 0.56f, 0.52f},
                              {0.22f, 0.22f, 0.25f},
                              {0.92f, 0.80f, 0.30f}};
  return s;
}

const RealStyle& style_a() {
  static const RealStyle s = [] {
    RealStyle r;
    r.style_id = "real_a";
    r.version = 1;
    r.texture_noise_amp = 0.12;
    r.shadow_count = 4;
    r.clutter_count = 10;
    r.brightness_jitter = 0.2;
    r.sensor_noise_amp = 0.02;
    r.night = false;
    r.sky_top = {0.45f, 0.62f, 0.88f};
    r.sky_horizon = {0.82f, 0.86f, 0.90f};
    r.ground = {0.30f, 0.42f, 0.20f};
    r.road = {0.47f, 0.45f, 0.42f};
    r.marking = {0.85f, 0.85f, 0.78f};
    r.tint = {1.0f, 0.97f, 0.92f};
    r.clutter_colors = {{0.12f, 0.30f, 0.10f}, {0.20f, 0.38f, 0.14f}, {0.55f, 0.35f, 0.25f},
                        {0.70f, 0.68f, 0.62f}, {0.35f, 0.25f, 0.18f}, {0.80f, 0.20f, 0.15f}};
    return r;
  }();
  return s;
}

const RealStyle& style_b() {
  static const RealStyle s = [] {
    RealStyle r;
    r.style_id = "real_b";
    r.version = 1;
    r.texture_noise_amp = 0.10;
    r.shadow_count = 0;
    r.clutter_count = 12;
    r.brightness_jitter = 0.3;
    r.sensor_noise_amp = 0.05;
    r.night = true;
    r.sky_top = {0.02f, 0.03f, 0.08f};
    r.sky_horizon = {0.10f, 0.10f, 0.18f};
    r.ground = {0.16f, 0.17f, 0.20f};
    r.road = {0.26f, 0.26f, 0.30f};
    r.marking = {0.70f, 0.62f, 0.38f};
    r.tint = {0.85f, 0.90f, 1.15f};
    r.clutter_colors = {{1.0f, 0.85f, 0.45f}, {0.95f, 0.95f, 1.0f}, {1.0f, 0.55f, 0.25f}};
    return r;
  }();
  return s;
}

std::string style_id(const DomainStyle& style) {
  return std::visit([](const auto& s) { return s.style_id; }, style);
}

bool is_virtual(const DomainStyle& style) { return std::holds_alternative<VirtualStyle>(style); }

DomainStyle style_by_id(const std::string& id) {
  if (id == virtual_torcs().style_id) return virtual_torcs();
  if (id == virtual_carla().style_id) return virtual_carla();
  if (id == style_a().style_id) return style_a();
  if (id == style_b().style_id) return style_b();
  throw InvalidInput("unknown style '" + id + "'");
}

torch::Tensor render_virtual(const SceneParams& scene, const VirtualStyle& style) {
  scene.validate();
  const RoadModel road(scene);
  auto unit = supersample([&](int, int, double u, double y) -> Rgb {
    switch (road.classify(u, y).surface) {
      case Surface::Sky: return style.sky;
      case Surface::Ground: return style.ground;
      case Surface::Road: return style.road;
      default: return style.marking;
    }
  });
  return quantize(unit);
}

RenderLayers render_real_layers(const SceneParams& scene, const RealStyle& style) {
  scene.validate();
  check_style(style);
  if (!scene.mirrored) return render_real_canonical(scene, style);
  // A mirrored scene is the reflection of its canonical twin, nuisance included.
  auto layers = render_real_canonical(mirror_scene(scene), style);
  return {layers.image.flip({-1}).contiguous(), layers.visible_marking.flip({-1}).contiguous()};
}

torch::Tensor render_real(const SceneParams& scene, const RealStyle& style) {
  return render_real_layers(scene, style).image;
}

torch::Tensor render(const SceneParams& scene, const DomainStyle& style) {
  if (const auto* v = std::get_if<VirtualStyle>(&style)) return render_virtual(scene, *v);
  return render_real(scene, std::get<RealStyle>(style));
}

torch::Tensor lane_marking_mask(const SceneParams& scene) {
  const RoadModel road(scene);
  auto mask = torch::zeros({H, W}, torch::kBool);
  auto acc = mask.accessor<bool, 2>();
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      int hits = 0;
      for (float sy : kSub)
        for (float sx : kSub) hits += road.classify(sample_u(c, sx), sample_y(r, sy)).surface == Surface::Marking;
      acc[r][c] = hits >= 2;
    }
  return mask;
}

SynthDataset build_dataset_from_scenes(const std::vector<SceneParams>& scenes, const DomainStyle& style,
                                       const VehicleGeometry& geom) {
  geom.validate();
  SynthDataset out;
  out.scenes = scenes;
  out.frames.domain_id = style_id(style);
  out.frames.geometry = geom;
  std::vector<torch::Tensor> images;
  images.reserve(scenes.size());
  for (const auto& scene : scenes) {
    images.push_back(render(scene, style));
    const double u = scene_inv_radius(scene);
    out.frames.steering_rad.push_back(inv_radius_to_steering(u, kSyntheticSpeed, geom));
    out.frames.speed_mps.push_back(kSyntheticSpeed);
    out.frames.inv_radius.push_back(u);
    out.frames.weight.push_back(1.0);
  }
  out.frames.images = images.empty() ? torch::empty({0, 3, H, W}) : torch::stack(images, 0);
  return out;
}

SynthDataset build_dataset(int n, const DomainStyle& style, const VehicleGeometry& geom, std::uint64_t seed) {
  if (n <= 0) throw InvalidInput("dataset size must be > 0");
  std::vector<SceneParams> scenes;
  scenes.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) scenes.push_back(sample_scene(mix_seed(seed, static_cast<std::uint64_t>(i))));
  return build_dataset_from_scenes(scenes, style, geom);
}

void write_dataset(const std::filesystem::path& dir, const SynthDataset& data) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.csv");
  std::ofstream scenes(dir / "scenes.csv");
  if (!index || !scenes) throw std::runtime_error("cannot write dataset into " + dir.string());
  index << "filename,steering_deg,speed_mps\n";
  scenes << "index,curvature,lane_offset,seed\n";
  char buf[256];
  for (std::size_t i = 0; i < data.frames.size(); ++i) {
    std::snprintf(buf, sizeof buf, "frame_%05zu.png", i);
    const std::string name = buf;
    write_frame(dir / name, data.frames.images[static_cast<int64_t>(i)]);
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g\n", name.c_str(), rad_to_deg(data.frames.steering_rad[i]),
                  data.frames.speed_mps[i]);
    index << buf;
    if (i < data.scenes.size()) {
      const auto& s = data.scenes[i];
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%llu\n", i, s.curvature, s.lane_offset,
                    static_cast<unsigned long long>(s.seed));
      scenes << buf;
    }
  }
}

}  // namespace dudrive

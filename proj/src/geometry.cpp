#include "dudrive/geometry.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dudrive/errors.hpp"
#include "dudrive/image_io.hpp"
#include "dudrive/random.hpp"

namespace dudrive {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw InvalidInput(std::string("non-finite ") + what);
  }
}

double ackermann_gain(double speed_mps, const VehicleGeometry& geom) {
  geom.validate();
  require_finite(speed_mps, "speed");
  return geom.wheelbase_m * geom.steer_ratio * (1.0 + geom.slip_coeff * speed_mps * speed_mps);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace

void VehicleGeometry::validate() const {
  if (!std::isfinite(wheelbase_m) || wheelbase_m <= 0.0) throw InvalidInput("wheelbase must be > 0");
  if (!std::isfinite(steer_ratio) || steer_ratio <= 0.0) throw InvalidInput("steer ratio must be > 0");
  if (!std::isfinite(slip_coeff) || slip_coeff < 0.0) throw InvalidInput("slip coefficient must be >= 0");
}

VehicleGeometry synthetic_geometry() { return VehicleGeometry{2.7, 15.3, 0.0}; }

double steering_to_inv_radius(double theta_rad, double speed_mps, const VehicleGeometry& geom) {
  require_finite(theta_rad, "steering angle");
  return theta_rad / ackermann_gain(speed_mps, geom);
}

double inv_radius_to_steering(double inv_radius, double speed_mps, const VehicleGeometry& geom) {
  require_finite(inv_radius, "inverse radius");
  return ackermann_gain(speed_mps, geom) * inv_radius;
}

torch::Tensor normalize_pixels(const torch::Tensor& pixels) {
  return pixels.to(torch::kFloat32) / 127.5f - 1.0f;
}

torch::Tensor to_raw_image(const torch::Tensor& frame) {
  if (frame.dim() != 3 || frame.size(0) != 3) {
    throw DimensionError("to_raw_image expects [3, H, W]");
  }
  auto levels = ((frame.to(torch::kFloat32) + 1.0f) * 127.5f).round().clamp(0, 255);
  return levels.to(torch::kUInt8).permute({1, 2, 0}).contiguous();
}

torch::Tensor preprocess(const torch::Tensor& raw) {
  if (raw.dim() != 3 || raw.size(2) != 3) {
    throw DimensionError("preprocess expects a [H, W, 3] image");
  }
  const auto h = raw.size(0);
  const auto w = raw.size(1);
  if (h < kCropHeight || w < kCropWidth) {
    std::ostringstream os;
    os << "image " << h << "x" << w << " is smaller than the " << kCropHeight << "x" << kCropWidth << " crop";
    throw DimensionError(os.str());
  }
  const auto left = (w - kCropWidth) / 2;
  auto crop = raw.slice(0, h - kCropHeight, h).slice(1, left, left + kCropWidth);
  auto chw = crop.permute({2, 0, 1}).to(torch::kFloat32).unsqueeze(0);
  namespace F = torch::nn::functional;
  auto resized = F::interpolate(chw, F::InterpolateFuncOptions()
                                         .size(std::vector<int64_t>{kFrameHeight, kFrameWidth})
                                         .mode(torch::kBilinear)
                                         .align_corners(false));
  return normalize_pixels(resized.squeeze(0)).clamp(-1.0f, 1.0f).contiguous();
}

LabeledFrame flip_augment(const LabeledFrame& frame) {
  LabeledFrame out = frame;
  out.image = frame.image.flip({-1});
  out.steering_rad = -frame.steering_rad;
  out.inv_radius = -frame.inv_radius;
  return out;
}

LabeledFrame FrameSet::frame(std::size_t i) const {
  return LabeledFrame{images[static_cast<int64_t>(i)], steering_rad.at(i), speed_mps.at(i), inv_radius.at(i),
                      domain_id, weight.at(i)};
}

void FrameSet::push_back(const LabeledFrame& f) {
  auto img = f.image.unsqueeze(0);
  images = images.defined() ? torch::cat({images, img}, 0) : img.clone();
  steering_rad.push_back(f.steering_rad);
  speed_mps.push_back(f.speed_mps);
  inv_radius.push_back(f.inv_radius);
  weight.push_back(f.weight);
}

FrameSet FrameSet::subset(const std::vector<std::int64_t>& indices) const {
  FrameSet out;
  out.domain_id = domain_id;
  out.geometry = geometry;
  auto idx = torch::tensor(indices, torch::kInt64);
  out.images = indices.empty() ? images.slice(0, 0, 0).clone() : images.index_select(0, idx);
  for (auto i : indices) {
    const auto k = static_cast<std::size_t>(i);
    out.steering_rad.push_back(steering_rad.at(k));
    out.speed_mps.push_back(speed_mps.at(k));
    out.inv_radius.push_back(inv_radius.at(k));
    out.weight.push_back(weight.at(k));
  }
  return out;
}

void FrameSet::check_consistent() const {
  const auto n = size();
  if (speed_mps.size() != n || inv_radius.size() != n || weight.size() != n ||
      (images.defined() ? static_cast<std::size_t>(images.size(0)) : 0U) != n) {
    throw DatasetError("frame set '" + domain_id + "' has mismatched label/image counts");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double u = steering_to_inv_radius(steering_rad[i], speed_mps[i], geometry);
    if (std::abs(u - inv_radius[i]) > 1e-9) {
      throw DatasetError("frame " + std::to_string(i) + " of '" + domain_id +
                         "' has an inverse radius inconsistent with its steering angle");
    }
  }
}

FrameSet concat(const FrameSet& a, const FrameSet& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  FrameSet out = a;
  out.images = torch::cat({a.images, b.images}, 0);
  auto append = [](std::vector<double>& dst, const std::vector<double>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
  };
  append(out.steering_rad, b.steering_rad);
  append(out.speed_mps, b.speed_mps);
  append(out.inv_radius, b.inv_radius);
  append(out.weight, b.weight);
  if (a.domain_id != b.domain_id) out.domain_id = a.domain_id + "+" + b.domain_id;
  return out;
}

FrameSet with_flips(const FrameSet& set) {
  FrameSet flipped = set;
  flipped.images = set.images.flip({-1});
  for (auto& v : flipped.steering_rad) v = -v;
  for (auto& v : flipped.inv_radius) v = -v;
  return concat(set, flipped);
}

std::pair<FrameSet, FrameSet> split_holdout(const FrameSet& set, double fraction, std::uint64_t seed) {
  const auto n = set.size();
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::int64_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::int64_t>(i);
  auto rng = make_rng(seed, "holdout:" + set.domain_id);
  shuffle(perm, rng);
  std::vector<std::int64_t> held(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::int64_t> kept(perm.begin() + static_cast<std::ptrdiff_t>(k), perm.end());
  std::sort(held.begin(), held.end());
  std::sort(kept.begin(), kept.end());
  return {set.subset(kept), set.subset(held)};
}

DatasetIndex ingest(const std::filesystem::path& index_file, const VehicleGeometry& geom, double filter_deg,
                    std::string domain_id) {
  geom.validate();
  std::ifstream in(index_file);
  if (!in) {
    throw DatasetError("cannot read dataset index " + index_file.string());
  }
  DatasetIndex index;
  index.root = index_file.parent_path();
  index.geometry = geom;
  index.domain_id = domain_id.empty() ? index_file.parent_path().filename().string() : std::move(domain_id);

  std::string line;
  std::size_t row = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++row;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    if (!header_seen) {
      if (view != "filename,steering_deg,speed_mps") {
        throw DatasetError(index_file.string() + ": row 1: expected header 'filename,steering_deg,speed_mps'");
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = view.find(',', start);
      fields.push_back(view.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    IndexEntry entry;
    if (fields.size() != 3 || trim(fields[0]).empty() || !parse_double(fields[1], entry.steering_deg) ||
        !parse_double(fields[2], entry.speed_mps)) {
      throw DatasetError(index_file.string() + ": malformed row " + std::to_string(row));
    }
    entry.filename = std::string(trim(fields[0]));
    if (std::abs(entry.steering_deg) > filter_deg) continue;
    index.entries.push_back(std::move(entry));
  }
  if (!header_seen) {
    throw DatasetError(index_file.string() + ": empty index file");
  }
  if (index.entries.empty()) {
    throw DatasetError(index_file.string() + ": no rows survive the steering filter");
  }
  return index;
}

FrameSet load_frames(const DatasetIndex& index) {
  FrameSet set;
  set.domain_id = index.domain_id;
  set.geometry = index.geometry;
  std::vector<torch::Tensor> images;
  images.reserve(index.entries.size());
  for (const auto& e : index.entries) {
    auto raw = read_image(index.root / e.filename);
    torch::Tensor frame;
    if (raw.size(0) == kFrameHeight && raw.size(1) == kFrameWidth) {
      frame = normalize_pixels(raw.permute({2, 0, 1})).contiguous();
    } else {
      frame = preprocess(raw);
    }
    images.push_back(frame);
    const double theta = deg_to_rad(e.steering_deg);
    set.steering_rad.push_back(theta);
    set.speed_mps.push_back(e.speed_mps);
    set.inv_radius.push_back(steering_to_inv_radius(theta, e.speed_mps, index.geometry));
    set.weight.push_back(1.0);
  }
  set.images = torch::stack(images, 0);
  return set;
}

}  // namespace dudrive

#include "dudrive/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "dudrive/errors.hpp"

namespace dudrive {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written in native little-endian order");

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

std::string shape_str(c10::IntArrayRef s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

}  // namespace

void Checkpoint::add(const std::string& name, const torch::Tensor& tensor) {
  auto stored = tensor.detach().to(torch::kCPU).to(torch::kFloat32).contiguous().clone();
  for (auto& [n, t] : tensors_) {
    if (n == name) {
      t = stored;
      return;
    }
  }
  tensors_.emplace_back(name, stored);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return true;
  return false;
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return t;
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::add_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters(true)) add(prefix + item.key(), item.value());
}

void Checkpoint::load_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard guard;
  for (auto& item : module.named_parameters(true)) {
    const auto& src = get(prefix + item.key());
    auto& dst = item.value();
    if (src.sizes() != dst.sizes()) {
      throw CheckpointError("shape mismatch for '" + prefix + item.key() + "': checkpoint " + shape_str(src.sizes()) +
                            ", architecture " + shape_str(dst.sizes()));
    }
    dst.copy_(src.to(dst.scalar_type()));
  }
}

void Checkpoint::save(const std::filesystem::path& stem) const {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const auto blob_path = with_suffix(stem, ".bin");
  nlohmann::json manifest;
  manifest["format"] = "dudrive-checkpoint";
  manifest["version"] = 1;
  manifest["blob"] = blob_path.filename().string();
  manifest["meta"] = meta;
  manifest["tensors"] = nlohmann::json::array();

  // Write to temporaries first so a crash never leaves a half-written pair.
  const auto tmp_blob = with_suffix(stem, ".bin.tmp");
  const auto tmp_manifest = with_suffix(stem, ".json.tmp");
  {
    std::ofstream blob(tmp_blob, std::ios::binary);
    if (!blob) throw CheckpointError("cannot write " + tmp_blob.string());
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors_) {
      const auto bytes = static_cast<std::uint64_t>(t.numel()) * sizeof(float);
      manifest["tensors"].push_back(
          {{"name", name}, {"shape", t.sizes().vec()}, {"dtype", "f32"}, {"offset", offset}});
      blob.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(bytes));
      offset += bytes;
    }
  }
  {
    std::ofstream out(tmp_manifest);
    if (!out) throw CheckpointError("cannot write " + tmp_manifest.string());
    out << manifest.dump(2) << "\n";
  }
  std::filesystem::rename(tmp_blob, blob_path);
  std::filesystem::rename(tmp_manifest, with_suffix(stem, ".json"));
}

bool Checkpoint::exists(const std::filesystem::path& stem) {
  return std::filesystem::exists(with_suffix(stem, ".json")) && std::filesystem::exists(with_suffix(stem, ".bin"));
}

Checkpoint Checkpoint::load(const std::filesystem::path& stem) {
  const auto manifest_path = with_suffix(stem, ".json");
  std::ifstream in(manifest_path);
  if (!in) throw CheckpointError("cannot read " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "dudrive-checkpoint") {
    throw CheckpointError(manifest_path.string() + " is not a checkpoint manifest");
  }
  const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw CheckpointError("cannot read " + blob_path.string());
  blob.seekg(0, std::ios::end);
  const auto blob_size = static_cast<std::uint64_t>(blob.tellg());

  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    if (entry.at("dtype") != "f32") throw CheckpointError("unsupported dtype in " + manifest_path.string());
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    auto t = torch::empty(shape, torch::kFloat32);
    const auto bytes = static_cast<std::uint64_t>(t.numel()) * sizeof(float);
    if (offset + bytes > blob_size) throw CheckpointError("truncated blob " + blob_path.string());
    blob.seekg(static_cast<std::streamoff>(offset));
    blob.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(bytes));
    ck.tensors_.emplace_back(entry.at("name").get<std::string>(), t);
  }
  return ck;
}

}  // namespace dudrive

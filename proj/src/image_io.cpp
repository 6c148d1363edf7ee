#include "dudrive/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dudrive/errors.hpp"
#include "dudrive/geometry.hpp"

namespace dudrive {

torch::Tensor read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw DatasetError("cannot decode image " + path.string());
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8);
  return t.clone();
}

void write_image(const std::filesystem::path& path, const torch::Tensor& rgb) {
  if (rgb.dim() != 3 || rgb.size(2) != 3 || rgb.scalar_type() != torch::kUInt8) {
    throw DimensionError("write_image expects uint8 [H, W, 3]");
  }
  auto c = rgb.contiguous();
  cv::Mat view(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)), CV_8UC3, c.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(view, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  if (!cv::imwrite(path.string(), bgr)) {
    throw std::runtime_error("cannot write image " + path.string());
  }
}

void write_frame(const std::filesystem::path& path, const torch::Tensor& frame) {
  write_image(path, to_raw_image(frame));
}

void write_grid(const std::filesystem::path& path, const std::vector<std::vector<torch::Tensor>>& rows) {
  std::vector<torch::Tensor> stacked_rows;
  for (const auto& row : rows) {
    std::vector<torch::Tensor> cells;
    for (const auto& f : row) cells.push_back(f.detach().to(torch::kFloat32).clamp(-1, 1));
    stacked_rows.push_back(torch::cat(cells, 2));
  }
  write_frame(path, torch::cat(stacked_rows, 1));
}

}  // namespace dudrive

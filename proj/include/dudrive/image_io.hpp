#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

namespace dudrive {

/// Decodes a PNG or JPEG into uint8 [H, W, 3], RGB order. Throws DatasetError.
torch::Tensor read_image(const std::filesystem::path& path);

/// Encodes uint8 [H, W, 3] RGB. Format follows the file extension.
void write_image(const std::filesystem::path& path, const torch::Tensor& rgb);

/// Writes a normalized [3, H, W] frame as an 8-bit PNG.
void write_frame(const std::filesystem::path& path, const torch::Tensor& frame);

/// Tiles rows of frames into one image. rows[r][c] is a [3, H, W] frame; all frames share a shape.
void write_grid(const std::filesystem::path& path, const std::vector<std::vector<torch::Tensor>>& rows);

}  // namespace dudrive

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nightcap/tensor.hpp"

namespace nightcap {

/// 8-bit RGB raster, interleaved, row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Decodes any PNG libpng understands into 8-bit RGB. Throws DataError.
RgbImage decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const RgbImage& image);

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

/// [3×H×W] tensor with values in [0,1].
Tensor image_to_tensor(const RgbImage& image);
/// Clamps to [0,1] and rounds to the nearest 8-bit level.
RgbImage tensor_to_image(const Tensor& chw);

/// Bilinear resampling with half-pixel centers and edge clamping.
Tensor resize_bilinear(const Tensor& chw, std::size_t out_h, std::size_t out_w);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws DataError on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace nightcap

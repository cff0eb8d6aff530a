#include "nightcap/image.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "nightcap/error.hpp"

namespace nightcap {

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    std::string msg = png.message;
    png_image_free(&png);
    throw DataError("cannot decode PNG: " + msg);
  }
  png.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = png.width;
  out.height = png.height;
  out.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw DataError("cannot decode PNG: " + msg);
  }
  if (out.width == 0 || out.height == 0) throw DataError("PNG has zero size");
  return out;
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  if (image.pixels.size() != image.width * image.height * 3 || image.width == 0 ||
      image.height == 0) {
    throw DimensionError("encode_png: pixel buffer does not match " +
                         std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw Error(std::string("cannot encode PNG: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw Error(std::string("cannot encode PNG: ") + png.message);
  }
  out.resize(size);
  return out;
}

RgbImage read_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor image_to_tensor(const RgbImage& image) {
  const std::size_t h = image.height, w = image.width;
  std::vector<double> data(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        data[(c * h + y) * w + x] = image.pixels[(y * w + x) * 3 + c] / 255.0;
      }
    }
  }
  return Tensor::from({3, h, w}, std::move(data));
}

RgbImage tensor_to_image(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) {
    throw DimensionError("expected a 3xHxW image tensor, got " + to_string(chw.shape()));
  }
  RgbImage out;
  out.height = chw.dim(1);
  out.width = chw.dim(2);
  out.pixels.resize(out.width * out.height * 3);
  const std::size_t h = out.height, w = out.width;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = std::clamp(chw[(c * h + y) * w + x], 0.0, 1.0);
        out.pixels[(y * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return out;
}

Tensor resize_bilinear(const Tensor& chw, std::size_t out_h, std::size_t out_w) {
  if (chw.rank() != 3) throw DimensionError("resize_bilinear: expected CxHxW, got " + to_string(chw.shape()));
  if (out_h == 0 || out_w == 0) throw DimensionError("resize_bilinear: empty output size");
  const std::size_t channels = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h == out_h && w == out_w) return chw.clone(false);

  auto sample_axis = [](std::size_t out_i, std::size_t out_n, std::size_t in_n) {
    const double src = (static_cast<double>(out_i) + 0.5) * static_cast<double>(in_n) /
                           static_cast<double>(out_n) - 0.5;
    const double clamped = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
    const auto lo = static_cast<std::size_t>(std::floor(clamped));
    const std::size_t hi = std::min(lo + 1, in_n - 1);
    return std::tuple{lo, hi, clamped - static_cast<double>(lo)};
  };

  std::vector<double> out(channels * out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = sample_axis(y, out_h, h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = sample_axis(x, out_w, w);
      for (std::size_t c = 0; c < channels; ++c) {
        auto at = [&](std::size_t yy, std::size_t xx) { return chw[(c * h + yy) * w + xx]; };
        const double top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
        const double bottom = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
        out[(c * out_h + y) * out_w + x] = top * (1 - fy) + bottom * fy;
      }
    }
  }
  return Tensor::from({channels, out_h, out_w}, std::move(out));
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::string compact;
  compact.reserve(text.size());
  for (char c : text) {
    if (c != '\n' && c != '\r' && c != ' ' && c != '\t') compact.push_back(c);
  }
  if (compact.empty()) return {};
  if (compact.size() % 4 != 0) throw DataError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(compact.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(compact.data()),
                                static_cast<int>(compact.size()));
  if (n < 0) throw DataError("base64: invalid character");
  std::size_t padding = 0;
  if (compact.ends_with("==")) {
    padding = 2;
  } else if (compact.ends_with("=")) {
    padding = 1;
  }
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

}  // namespace nightcap

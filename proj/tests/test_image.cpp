#include <gtest/gtest.h>

#include "nightcap/error.hpp"
#include "nightcap/image.hpp"
#include "nightcap/random.hpp"
#include "test_support.hpp"

using namespace nightcap;

namespace {

RgbImage random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage img{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

}  // namespace

TEST(Png, EncodeDecodeRoundTrip) {
  const auto img = random_image(13, 7, 1);
  EXPECT_EQ(decode_png(encode_png(img)), img);
}

TEST(Png, FileRoundTripAndErrors) {
  const auto dir = scratch_dir();
  const auto img = random_image(5, 9, 2);
  write_png(dir / "x.png", img);
  EXPECT_EQ(read_png(dir / "x.png"), img);
  EXPECT_THROW(read_png(dir / "nope.png"), DataError);
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  EXPECT_THROW(decode_png(junk), DataError);
}

TEST(Png, TensorConversionIsExactOnByteValues) {
  const auto img = random_image(4, 6, 3);
  const auto t = image_to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape{3, 6, 4}));
  EXPECT_EQ(tensor_to_image(t), img);
  EXPECT_THROW(tensor_to_image(Tensor::zeros({1, 2, 2})), DimensionError);
}

TEST(Resize, ConstantStaysConstantAndShapesFollow) {
  const auto out = resize_bilinear(Tensor::filled({3, 128, 128}, 0.25), 64, 64);
  EXPECT_EQ(out.shape(), (Shape{3, 64, 64}));
  for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_EQ(resize_bilinear(Tensor::filled({3, 10, 20}, 1.0), 64, 64).shape(), (Shape{3, 64, 64}));
}

TEST(Resize, HalvingAveragesPairs) {
  // Downsampling by 2 samples exactly between source pixels.
  const auto out = resize_bilinear(Tensor::from({1, 2, 4}, {0, 1, 2, 3, 4, 5, 6, 7}), 1, 2);
  EXPECT_DOUBLE_EQ(out[0], 2.5);
  EXPECT_DOUBLE_EQ(out[1], 4.5);
}

TEST(Base64, KnownVectorsAndRoundTrip) {
  auto bytes = [](std::string_view s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  EXPECT_EQ(base64_encode(bytes("")), "");
  EXPECT_EQ(base64_encode(bytes("f")), "Zg==");
  EXPECT_EQ(base64_encode(bytes("fo")), "Zm8=");
  EXPECT_EQ(base64_encode(bytes("foobar")), "Zm9vYmFy");
  EXPECT_EQ(base64_decode("Zm8="), bytes("fo"));
  EXPECT_EQ(base64_decode("Zm9v\nYmFy"), bytes("foobar"));
  const auto img = random_image(3, 3, 4);
  const auto png = encode_png(img);
  EXPECT_EQ(base64_decode(base64_encode(png)), png);
  EXPECT_THROW(base64_decode("abc"), DataError);
  EXPECT_THROW(base64_decode("ab!d"), DataError);
}

#include "nightcap/encoder.hpp"

#include <cmath>

#include "nightcap/error.hpp"
#include "nightcap/random.hpp"

namespace nightcap {

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

EncoderParams init_encoder(std::uint64_t seed, std::array<std::size_t, 3> channels,
                           std::size_t input_channels) {
  Rng rng(seed);
  EncoderParams params;
  std::size_t c_in = input_channels;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t c_out = channels[s];
    const std::size_t area = kEncoderKernel * kEncoderKernel;
    const double bound = glorot_bound(c_in * area, c_out * area);
    std::vector<double> w(c_out * c_in * area);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    params.kernels[s] = Tensor::from({c_out, c_in, kEncoderKernel, kEncoderKernel}, std::move(w), true);
    params.biases[s] = Tensor::zeros({c_out}, true);
    c_in = c_out;
  }
  return params;
}

AnnotationGrid encode(Tape& tape, const EncoderParams& params, const Tensor& image) {
  if (!image.defined() || image.rank() != 3 || image.dim(0) != params.input_channels() ||
      image.dim(1) != image.dim(2) || image.dim(1) % kEncoderDownsample != 0) {
    throw DimensionError("encode: expected a " + std::to_string(params.input_channels()) +
                         "xSxS image with S a multiple of 8, got " +
                         (image.defined() ? to_string(image.shape()) : std::string("undefined")));
  }
  Tensor x = image;
  for (std::size_t s = 0; s < 3; ++s) {
    x = ops::conv2d(tape, x, params.kernels[s], params.biases[s], 1, kEncoderKernel / 2);
    x = ops::relu(tape, x);
    x = ops::max_pool2d(tape, x, 2);
  }
  const std::size_t d = x.dim(0), side = x.dim(1);
  x = ops::reshape(tape, x, {d, side * side});
  return {ops::transpose(tape, x), side};
}

}  // namespace nightcap

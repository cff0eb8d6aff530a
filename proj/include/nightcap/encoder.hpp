#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "nightcap/tensor.hpp"

namespace nightcap {

/// Three conv(3x3, pad 1) -> relu -> maxpool(2) stages.
struct EncoderParams {
  std::array<Tensor, 3> kernels;  // [C_out×C_in×3×3]
  std::array<Tensor, 3> biases;   // [C_out]

  std::size_t feature_dim() const { return kernels[2].dim(0); }
  std::size_t input_channels() const { return kernels[0].dim(1); }
};

/// L×D annotation vectors; row i is spatial cell (i / grid_side, i % grid_side).
struct AnnotationGrid {
  Tensor features;
  std::size_t grid_side = 0;

  std::size_t locations() const { return features.dim(0); }
  std::size_t dim() const { return features.dim(1); }
};

inline constexpr std::size_t kEncoderKernel = 3;
inline constexpr std::size_t kEncoderDownsample = 8;

/// Glorot-uniform bound sqrt(6 / (fan_in + fan_out)).
double glorot_bound(std::size_t fan_in, std::size_t fan_out);

/// Glorot-uniform kernels, zero biases. Deterministic per seed.
EncoderParams init_encoder(std::uint64_t seed, std::array<std::size_t, 3> channels = {16, 32, 64},
                           std::size_t input_channels = 3);

/// Image [C×S×S] with S a multiple of 8 -> grid of (S/8)² annotation vectors.
AnnotationGrid encode(Tape& tape, const EncoderParams& params, const Tensor& image);

}  // namespace nightcap

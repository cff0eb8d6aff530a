#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nightcap/attention.hpp"
#include "nightcap/decoder.hpp"
#include "nightcap/encoder.hpp"
#include "nightcap/vocab.hpp"

namespace nightcap {

struct ModelConfig {
  std::size_t image_size = 64;
  std::array<std::size_t, 3> channels{16, 32, 64};
  std::size_t embed_dim = 64;
  std::size_t attention_dim = 64;
  std::size_t state_dim = 128;
  AttentionMode attention_mode = AttentionMode::bahdanau;
  /// Encoded caption length including START and END.
  std::size_t max_caption_tokens = 22;
  /// Greedy decoding cap.
  std::size_t max_decode_len = 20;

  std::size_t feature_dim() const { return channels[2]; }
  std::size_t grid_side() const { return image_size / kEncoderDownsample; }
  std::size_t locations() const { return grid_side() * grid_side(); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// All parameters plus what is needed to interpret them. Copies share
/// parameter storage; use clone() for an independent model.
struct CaptionModel {
  ModelConfig config;
  Vocabulary vocab;
  EncoderParams encoder;
  AttentionParams attention;
  DecoderParams decoder;

  /// Stable order; names are the checkpoint directory keys.
  std::vector<NamedTensor> named_parameters() const;
  std::size_t parameter_count() const;
  CaptionModel clone() const;
  void zero_grad();
};

CaptionModel init_model(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed);

/// Encoder output plus everything per-image the decode loop reuses.
struct EncodedImage {
  AnnotationGrid grid;
  Tensor keys;    // attention projection of the annotations
  Tensor state0;  // initial decoder state
};

/// Throws DimensionError unless the image is 3×S×S with S = config.image_size.
void check_image(const ModelConfig& config, const Tensor& image);
EncodedImage encode_image(Tape& tape, const CaptionModel& model, const Tensor& image);

/// Teacher-forced mean cross-entropy over non-PAD target positions. Throws
/// DataError unless targets start with START and contain END.
Tensor sequence_loss(Tape& tape, const CaptionModel& model, const Tensor& image,
                     std::span<const std::size_t> target_ids,
                     std::optional<std::size_t> guide_word = std::nullopt);

}  // namespace nightcap

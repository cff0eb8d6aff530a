#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "nightcap/encoder.hpp"
#include "nightcap/tensor.hpp"

namespace nightcap {

enum class AttentionMode { bahdanau, dot };

std::string_view name(AttentionMode mode);
/// Throws ParameterError for anything but "bahdanau" / "dot".
AttentionMode parse_attention_mode(std::string_view text);

/// Only the tensors of the active mode are defined.
struct AttentionParams {
  AttentionMode mode = AttentionMode::bahdanau;
  // bahdanau
  Tensor w_h;  // [D×A]
  Tensor w_s;  // [S×A]
  Tensor w_u;  // [E×A]
  Tensor v;    // [A]
  // dot
  Tensor w_q;   // [S×A]
  Tensor w_k;   // [D×A]
  Tensor w_ub;  // [E×A]

  std::size_t attention_dim() const;
};

struct AttentionStep {
  Tensor weights;  // [L], on the simplex
  Tensor context;  // [D]
  Tensor scores;   // [L]
};

AttentionParams init_attention(AttentionMode mode, std::size_t feature_dim, std::size_t state_dim,
                               std::size_t embed_dim, std::size_t attention_dim, std::uint64_t seed);

/// Annotation projection shared by every decode step (W_h h_i or W_k h_i), [L×A].
Tensor project_annotations(Tape& tape, const AttentionParams& params, const AnnotationGrid& grid);

/// Guide-word bias g (W_u or W_ub applied to the guide embedding), [A].
Tensor guide_bias(Tape& tape, const AttentionParams& params, const Tensor& guide);

/// Scores, weights and context for one decoder state.
///   bahdanau: e_i = v · tanh(W_h h_i + W_s s + g)
///   dot:      e_i = (W_q s + g) · (W_k h_i) / sqrt(A)
/// `keys` comes from project_annotations; `bias` from guide_bias, or null.
AttentionStep attend_projected(Tape& tape, const AttentionParams& params, const AnnotationGrid& grid,
                               const Tensor& keys, const Tensor& state, const Tensor* bias);

AttentionStep attend(Tape& tape, const AttentionParams& params, const AnnotationGrid& grid,
                     const Tensor& state, const std::optional<Tensor>& guide = std::nullopt);

}  // namespace nightcap

#pragma once

#include <cstddef>
#include <cstdint>

#include "nightcap/encoder.hpp"
#include "nightcap/tensor.hpp"

namespace nightcap {

/// GRU decoder with deep output over [state; context; previous embedding].
struct DecoderParams {
  Tensor embedding;  // [V×E], shared with guide words
  Tensor w_z, w_r, w_n;  // [(E+D)×S]
  Tensor u_z, u_r, u_n;  // [S×S]
  Tensor b_z, b_r, b_n;  // [S]
  Tensor w_init;     // [D×S]
  Tensor b_init;     // [S]
  Tensor w_o;        // [(S+D+E)×V]
  Tensor b_o;        // [V]

  std::size_t vocab_size() const { return embedding.dim(0); }
  std::size_t embed_dim() const { return embedding.dim(1); }
  std::size_t state_dim() const { return u_z.dim(0); }
};

struct DecoderStep {
  Tensor logits;     // [V]
  Tensor new_state;  // [S]
};

DecoderParams init_decoder(std::size_t vocab_size, std::size_t embed_dim, std::size_t feature_dim,
                           std::size_t state_dim, std::uint64_t seed);

/// s0 = tanh(mean_i(h_i) W_init + b_init).
Tensor init_state(Tape& tape, const DecoderParams& params, const AnnotationGrid& grid);

/// Embedding row for a word; throws DataError when out of range.
Tensor guide_embedding(Tape& tape, const DecoderParams& params, std::size_t word_id);
Tensor guide_embedding(const DecoderParams& params, std::size_t word_id);

/// One GRU step on x = [embedding(prev); context]:
///   z = σ(x W_z + s U_z + b_z),  r = σ(x W_r + s U_r + b_r)
///   n = tanh(x W_n + (r ⊙ s) U_n + b_n),  s' = z ⊙ s + (1 - z) ⊙ n
DecoderStep step(Tape& tape, const DecoderParams& params, std::size_t prev_word,
                 const Tensor& state, const Tensor& context);

}  // namespace nightcap

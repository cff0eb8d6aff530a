#include "nightcap/decoder.hpp"

#include "nightcap/error.hpp"
#include "nightcap/random.hpp"

namespace nightcap {

namespace {

Tensor glorot_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = glorot_bound(rows, cols);
  std::vector<double> w(rows * cols);
  for (auto& x : w) x = rng.uniform(-bound, bound);
  return Tensor::from({rows, cols}, std::move(w), true);
}

Tensor gate(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& s, const Tensor& u,
            const Tensor& b) {
  return ops::add(tape, ops::add(tape, ops::vecmat(tape, x, w), ops::vecmat(tape, s, u)), b);
}

}  // namespace

DecoderParams init_decoder(std::size_t vocab_size, std::size_t embed_dim, std::size_t feature_dim,
                           std::size_t state_dim, std::uint64_t seed) {
  Rng rng(seed);
  DecoderParams p;
  p.embedding = glorot_matrix(rng, vocab_size, embed_dim);
  const std::size_t in = embed_dim + feature_dim;
  p.w_z = glorot_matrix(rng, in, state_dim);
  p.w_r = glorot_matrix(rng, in, state_dim);
  p.w_n = glorot_matrix(rng, in, state_dim);
  p.u_z = glorot_matrix(rng, state_dim, state_dim);
  p.u_r = glorot_matrix(rng, state_dim, state_dim);
  p.u_n = glorot_matrix(rng, state_dim, state_dim);
  p.b_z = Tensor::zeros({state_dim}, true);
  p.b_r = Tensor::zeros({state_dim}, true);
  p.b_n = Tensor::zeros({state_dim}, true);
  p.w_init = glorot_matrix(rng, feature_dim, state_dim);
  p.b_init = Tensor::zeros({state_dim}, true);
  p.w_o = glorot_matrix(rng, state_dim + feature_dim + embed_dim, vocab_size);
  p.b_o = Tensor::zeros({vocab_size}, true);
  return p;
}

Tensor init_state(Tape& tape, const DecoderParams& params, const AnnotationGrid& grid) {
  Tensor pooled = ops::mean_rows(tape, grid.features);
  return ops::tanh(tape, ops::add(tape, ops::vecmat(tape, pooled, params.w_init), params.b_init));
}

Tensor guide_embedding(Tape& tape, const DecoderParams& params, std::size_t word_id) {
  if (word_id >= params.vocab_size()) {
    throw DataError("guide word id " + std::to_string(word_id) +
                    " out of range for vocabulary of size " + std::to_string(params.vocab_size()));
  }
  return ops::embedding(tape, params.embedding, word_id);
}

Tensor guide_embedding(const DecoderParams& params, std::size_t word_id) {
  Tape tape = Tape::inference();
  return guide_embedding(tape, params, word_id);
}

DecoderStep step(Tape& tape, const DecoderParams& params, std::size_t prev_word, const Tensor& state,
                 const Tensor& context) {
  if (prev_word >= params.vocab_size()) {
    throw DataError("previous word id " + std::to_string(prev_word) +
                    " out of range for vocabulary of size " + std::to_string(params.vocab_size()));
  }
  Tensor emb = ops::embedding(tape, params.embedding, prev_word);
  Tensor x = ops::concat(tape, {emb, context});
  Tensor z = ops::sigmoid(tape, gate(tape, x, params.w_z, state, params.u_z, params.b_z));
  Tensor r = ops::sigmoid(tape, gate(tape, x, params.w_r, state, params.u_r, params.b_r));
  Tensor gated = ops::mul(tape, r, state);
  Tensor n = ops::tanh(tape, gate(tape, x, params.w_n, gated, params.u_n, params.b_n));
  Tensor keep = ops::mul(tape, z, state);
  Tensor update = ops::mul(tape, ops::affine(tape, z, -1.0, 1.0), n);
  Tensor next = ops::add(tape, keep, update);

  Tensor features = ops::concat(tape, {next, context, emb});
  Tensor logits = ops::add(tape, ops::vecmat(tape, features, params.w_o), params.b_o);
  return {logits, next};
}

}  // namespace nightcap

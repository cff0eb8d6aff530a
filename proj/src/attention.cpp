#include "nightcap/attention.hpp"

#include <cmath>

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

void check_vector(const Tensor& t, std::size_t n, const char* what) {
  if (!t.defined() || t.rank() != 1 || t.dim(0) != n) {
    throw DimensionError(std::string("attend: ") + what + " must have shape [" +
                         std::to_string(n) + "], got " +
                         (t.defined() ? to_string(t.shape()) : std::string("undefined")));
  }
}

}  // namespace

std::string_view name(AttentionMode mode) {
  return mode == AttentionMode::bahdanau ? "bahdanau" : "dot";
}

AttentionMode parse_attention_mode(std::string_view text) {
  if (text == "bahdanau") return AttentionMode::bahdanau;
  if (text == "dot") return AttentionMode::dot;
  throw ParameterError("attention mode must be bahdanau or dot, got '" + std::string(text) + "'");
}

std::size_t AttentionParams::attention_dim() const {
  return mode == AttentionMode::bahdanau ? w_h.dim(1) : w_k.dim(1);
}

AttentionParams init_attention(AttentionMode mode, std::size_t feature_dim, std::size_t state_dim,
                               std::size_t embed_dim, std::size_t attention_dim, std::uint64_t seed) {
  Rng rng(seed);
  AttentionParams p;
  p.mode = mode;
  if (mode == AttentionMode::bahdanau) {
    p.w_h = glorot_matrix(rng, feature_dim, attention_dim);
    p.w_s = glorot_matrix(rng, state_dim, attention_dim);
    p.w_u = glorot_matrix(rng, embed_dim, attention_dim);
    const double bound = glorot_bound(attention_dim, 1);
    std::vector<double> v(attention_dim);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    p.v = Tensor::from({attention_dim}, std::move(v), true);
  } else {
    p.w_q = glorot_matrix(rng, state_dim, attention_dim);
    p.w_k = glorot_matrix(rng, feature_dim, attention_dim);
    p.w_ub = glorot_matrix(rng, embed_dim, attention_dim);
  }
  return p;
}

Tensor project_annotations(Tape& tape, const AttentionParams& params, const AnnotationGrid& grid) {
  const Tensor& w = params.mode == AttentionMode::bahdanau ? params.w_h : params.w_k;
  return ops::matmul(tape, grid.features, w);
}

Tensor guide_bias(Tape& tape, const AttentionParams& params, const Tensor& guide) {
  const Tensor& w = params.mode == AttentionMode::bahdanau ? params.w_u : params.w_ub;
  check_vector(guide, w.dim(0), "guide");
  return ops::vecmat(tape, guide, w);
}

AttentionStep attend_projected(Tape& tape, const AttentionParams& params, const AnnotationGrid& grid,
                               const Tensor& keys, const Tensor& state, const Tensor* bias) {
  const std::size_t locations = grid.locations();
  const std::size_t a_dim = params.attention_dim();
  const Tensor& w_state = params.mode == AttentionMode::bahdanau ? params.w_s : params.w_q;
  check_vector(state, w_state.dim(0), "state");

  Tensor query = ops::vecmat(tape, state, w_state);
  if (bias != nullptr) query = ops::add(tape, query, *bias);

  Tensor scores;
  if (params.mode == AttentionMode::bahdanau) {
    Tensor hidden = ops::tanh(tape, ops::add(tape, keys, query));
    Tensor col = ops::reshape(tape, params.v, {a_dim, 1});
    scores = ops::reshape(tape, ops::matmul(tape, hidden, col), {locations});
  } else {
    Tensor col = ops::reshape(tape, query, {a_dim, 1});
    scores = ops::reshape(tape, ops::matmul(tape, keys, col), {locations});
    scores = ops::affine(tape, scores, 1.0 / std::sqrt(static_cast<double>(a_dim)));
  }
  Tensor weights = ops::softmax(tape, scores, 0);
  Tensor context = ops::vecmat(tape, weights, grid.features);
  return {weights, context, scores};
}

AttentionStep attend(Tape& tape, const AttentionParams& params, const AnnotationGrid& grid,
                     const Tensor& state, const std::optional<Tensor>& guide) {
  Tensor keys = project_annotations(tape, params, grid);
  if (!guide) return attend_projected(tape, params, grid, keys, state, nullptr);
  Tensor bias = guide_bias(tape, params, *guide);
  return attend_projected(tape, params, grid, keys, state, &bias);
}

}  // namespace nightcap

#include "nightcap/model.hpp"

#include <algorithm>

#include "nightcap/error.hpp"

namespace nightcap {

std::vector<NamedTensor> CaptionModel::named_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string stage = "encoder.conv" + std::to_string(s + 1);
    out.emplace_back(stage + ".weight", encoder.kernels[s]);
    out.emplace_back(stage + ".bias", encoder.biases[s]);
  }
  if (attention.mode == AttentionMode::bahdanau) {
    out.emplace_back("attention.w_h", attention.w_h);
    out.emplace_back("attention.w_s", attention.w_s);
    out.emplace_back("attention.w_u", attention.w_u);
    out.emplace_back("attention.v", attention.v);
  } else {
    out.emplace_back("attention.w_q", attention.w_q);
    out.emplace_back("attention.w_k", attention.w_k);
    out.emplace_back("attention.w_ub", attention.w_ub);
  }
  const DecoderParams& d = decoder;
  for (const auto& [n, t] : std::initializer_list<std::pair<const char*, const Tensor*>>{
           {"embedding", &d.embedding}, {"w_z", &d.w_z}, {"w_r", &d.w_r}, {"w_n", &d.w_n},
           {"u_z", &d.u_z}, {"u_r", &d.u_r}, {"u_n", &d.u_n}, {"b_z", &d.b_z}, {"b_r", &d.b_r},
           {"b_n", &d.b_n}, {"w_init", &d.w_init}, {"b_init", &d.b_init}, {"w_o", &d.w_o},
           {"b_o", &d.b_o}}) {
    out.emplace_back(std::string("decoder.") + n, *t);
  }
  return out;
}

std::size_t CaptionModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.size();
  return n;
}

CaptionModel CaptionModel::clone() const {
  CaptionModel copy = *this;
  auto fresh = [](Tensor& t) {
    if (t.defined()) t = t.clone(true);
  };
  for (auto& t : copy.encoder.kernels) fresh(t);
  for (auto& t : copy.encoder.biases) fresh(t);
  for (auto* t : {&copy.attention.w_h, &copy.attention.w_s, &copy.attention.w_u, &copy.attention.v,
                  &copy.attention.w_q, &copy.attention.w_k, &copy.attention.w_ub}) {
    fresh(*t);
  }
  DecoderParams& d = copy.decoder;
  for (auto* t : {&d.embedding, &d.w_z, &d.w_r, &d.w_n, &d.u_z, &d.u_r, &d.u_n, &d.b_z, &d.b_r,
                  &d.b_n, &d.w_init, &d.b_init, &d.w_o, &d.b_o}) {
    fresh(*t);
  }
  return copy;
}

void CaptionModel::zero_grad() {
  for (auto& [name, t] : named_parameters()) t.zero_grad();
}

CaptionModel init_model(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed) {
  if (config.image_size == 0 || config.image_size % kEncoderDownsample != 0) {
    throw ParameterError("image_size must be a positive multiple of 8");
  }
  if (config.max_caption_tokens < 2 || config.max_decode_len == 0) {
    throw ParameterError("caption lengths must allow at least START and END");
  }
  CaptionModel model;
  model.config = config;
  model.vocab = std::move(vocab);
  model.encoder = init_encoder(seed, config.channels);
  model.attention = init_attention(config.attention_mode, config.feature_dim(), config.state_dim,
                                   config.embed_dim, config.attention_dim, seed + 1);
  model.decoder = init_decoder(model.vocab.size(), config.embed_dim, config.feature_dim(),
                               config.state_dim, seed + 2);
  return model;
}

void check_image(const ModelConfig& config, const Tensor& image) {
  const std::size_t s = config.image_size;
  if (!image.defined() || image.shape() != Shape{3, s, s}) {
    throw DimensionError("expected a 3x" + std::to_string(s) + "x" + std::to_string(s) +
                         " image, got " +
                         (image.defined() ? to_string(image.shape()) : std::string("undefined")));
  }
}

EncodedImage encode_image(Tape& tape, const CaptionModel& model, const Tensor& image) {
  check_image(model.config, image);
  EncodedImage out;
  out.grid = encode(tape, model.encoder, image);
  out.keys = project_annotations(tape, model.attention, out.grid);
  out.state0 = init_state(tape, model.decoder, out.grid);
  return out;
}

Tensor sequence_loss(Tape& tape, const CaptionModel& model, const Tensor& image,
                     std::span<const std::size_t> target_ids, std::optional<std::size_t> guide_word) {
  if (target_ids.size() < 2 || target_ids.front() != Vocabulary::kStart ||
      std::find(target_ids.begin(), target_ids.end(), Vocabulary::kEnd) == target_ids.end()) {
    throw DataError("sequence_loss: target must begin with START and contain END");
  }
  for (auto id : target_ids) {
    if (id >= model.vocab.size()) {
      throw DataError("sequence_loss: target id " + std::to_string(id) + " out of range");
    }
  }
  // Trailing PAD positions are masked out, so the unroll stops at the last
  // non-PAD target.
  std::size_t last = target_ids.size() - 1;
  while (target_ids[last] == Vocabulary::kPad) --last;

  EncodedImage enc = encode_image(tape, model, image);
  std::optional<Tensor> bias;
  if (guide_word) {
    bias = guide_bias(tape, model.attention, guide_embedding(tape, model.decoder, *guide_word));
  }

  const std::size_t vocab = model.vocab.size();
  std::vector<Tensor> rows;
  std::vector<std::size_t> targets;
  std::vector<unsigned char> mask;
  Tensor state = enc.state0;
  for (std::size_t t = 1; t <= last; ++t) {
    AttentionStep att = attend_projected(tape, model.attention, enc.grid, enc.keys, state,
                                         bias ? &*bias : nullptr);
    DecoderStep out = step(tape, model.decoder, target_ids[t - 1], state, att.context);
    state = out.new_state;
    rows.push_back(ops::reshape(tape, out.logits, {1, vocab}));
    targets.push_back(target_ids[t]);
    mask.push_back(target_ids[t] != Vocabulary::kPad ? 1 : 0);
  }
  Tensor logits = ops::concat(tape, rows, 0);
  return ops::cross_entropy(tape, logits, targets, mask);
}

}  // namespace nightcap

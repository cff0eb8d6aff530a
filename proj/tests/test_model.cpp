#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "nightcap/dataset.hpp"
#include "nightcap/error.hpp"
#include "nightcap/model.hpp"
#include "nightcap/optim.hpp"

using namespace nightcap;

namespace {

CaptionModel small_model(AttentionMode mode = AttentionMode::bahdanau, std::uint64_t seed = 1) {
  const std::vector<std::string> captions{"a red circle left of a blue square"};
  ModelConfig cfg;
  cfg.attention_mode = mode;
  return init_model(cfg, build_vocabulary(captions), seed);
}

Tensor scene(std::uint64_t seed) { return generate_scene(random_scene_spec(seed)).pixels; }

double loss_of(const CaptionModel& m, const Tensor& image, const std::vector<std::size_t>& ids,
               std::optional<std::size_t> guide = std::nullopt) {
  Tape tape = Tape::inference();
  return sequence_loss(tape, m, image, ids, guide).item();
}

}  // namespace

TEST(SequenceLoss, StartEndIsOneCrossEntropyTerm) {
  const auto m = small_model();
  const auto image = scene(1);
  Tape tape = Tape::inference();
  const auto enc = encode_image(tape, m, image);
  const auto att = attend_projected(tape, m.attention, enc.grid, enc.keys, enc.state0, nullptr);
  const auto out = step(tape, m.decoder, Vocabulary::kStart, enc.state0, att.context);
  const auto p = softmax_values(out.logits.data());
  EXPECT_NEAR(loss_of(m, image, {Vocabulary::kStart, Vocabulary::kEnd}), -std::log(p[Vocabulary::kEnd]), 1e-12);
}

TEST(SequenceLoss, ZeroOutputProjectionGivesLogV) {
  auto m = small_model();
  m.decoder.w_o = Tensor::zeros(m.decoder.w_o.shape());
  m.decoder.b_o = Tensor::zeros(m.decoder.b_o.shape());
  const auto ids = encode_caption(m.vocab, "a red circle left of a blue square", 22);
  EXPECT_NEAR(loss_of(m, scene(2), ids), std::log(static_cast<double>(m.vocab.size())), 1e-12);
}

TEST(SequenceLoss, PaddingNeverChangesTheLoss) {
  for (auto mode : {AttentionMode::bahdanau, AttentionMode::dot}) {
    const auto m = small_model(mode);
    const auto image = scene(3);
    auto ids = encode_caption(m.vocab, "a blue circle", 5);
    const double base = loss_of(m, image, ids);
    for (int extra = 1; extra < 6; ++extra) {
      ids.push_back(Vocabulary::kPad);
      EXPECT_NEAR(loss_of(m, image, ids), base, 1e-12);
    }
  }
}

TEST(SequenceLoss, IsPositive) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = small_model(AttentionMode::bahdanau, seed);
    const auto ids = encode_caption(m.vocab, "a red square above a blue circle", 22);
    EXPECT_GT(loss_of(m, scene(seed), ids), 0.0);
    EXPECT_GT(loss_of(m, scene(seed), ids, *m.vocab.find("square")), 0.0);
  }
}

TEST(SequenceLoss, MalformedTargetIsDataError) {
  const auto m = small_model();
  const auto image = scene(1);
  EXPECT_THROW(loss_of(m, image, {Vocabulary::kStart}), DataError);
  EXPECT_THROW(loss_of(m, image, {5, Vocabulary::kEnd}), DataError);
  EXPECT_THROW(loss_of(m, image, {Vocabulary::kStart, 5, 6}), DataError);
  EXPECT_THROW(loss_of(m, image, {Vocabulary::kStart, m.vocab.size(), Vocabulary::kEnd}), DataError);
  EXPECT_THROW(loss_of(m, Tensor::zeros({3, 32, 32}), {Vocabulary::kStart, Vocabulary::kEnd}), DimensionError);
}

TEST(SequenceLoss, GuideChangesTheLoss) {
  const auto m = small_model();
  const auto ids = encode_caption(m.vocab, "a red circle", 22);
  EXPECT_NE(loss_of(m, scene(4), ids), loss_of(m, scene(4), ids, *m.vocab.find("circle")));
}

TEST(SequenceLoss, OverfitsOnePairInTwoHundredSteps) {
  auto m = small_model();
  const auto img = generate_scene(random_scene_spec(5));
  const auto ids = encode_caption(m.vocab, img.captions[0], 22);
  std::vector<Tensor> params;
  for (auto& [name, t] : m.named_parameters()) params.push_back(t);
  Adam adam(params, {1e-3});
  double loss = 0;
  for (int i = 0; i < 200; ++i) {
    Tape tape;
    const auto l = sequence_loss(tape, m, img.pixels, ids);
    loss = l.item();
    tape.backward(l);
    clip_grad_norm(params, 5.0);
    adam.step();
    m.zero_grad();
  }
  EXPECT_LT(loss_of(m, img.pixels, ids), 0.05) << "last step loss " << loss;
}

TEST(CaptionModel, ParametersAreNamedOnceAndCloneIsDeep) {
  const auto m = small_model();
  const auto named = m.named_parameters();
  std::set<std::string> names;
  for (const auto& [n, t] : named) EXPECT_TRUE(names.insert(n).second) << n;
  EXPECT_EQ(named.size(), 6u + 4u + 14u);
  auto copy = m.clone();
  copy.decoder.b_o.mutable_data()[0] = 42.0;
  EXPECT_NE(m.decoder.b_o[0], 42.0);
  EXPECT_EQ(copy.parameter_count(), m.parameter_count());
  EXPECT_EQ(small_model(AttentionMode::dot).named_parameters().size(), 6u + 3u + 14u);
}

TEST(CaptionModel, InitIsSeeded) {
  const auto a = small_model(AttentionMode::bahdanau, 3), b = small_model(AttentionMode::bahdanau, 3);
  const auto na = a.named_parameters(), nb = b.named_parameters();
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_TRUE(std::ranges::equal(na[i].second.data(), nb[i].second.data())) << na[i].first;
  }
  ModelConfig bad;
  bad.image_size = 60;
  EXPECT_THROW(init_model(bad, Vocabulary{}, 1), ParameterError);
}

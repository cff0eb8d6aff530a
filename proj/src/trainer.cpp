#include "nightcap/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "nightcap/error.hpp"
#include "nightcap/optim.hpp"

namespace nightcap {

namespace {

const std::set<std::string, std::less<>> kColors{"red", "green", "blue", "yellow"};
const std::set<std::string, std::less<>> kShapes{"circle", "square", "triangle"};
const std::set<std::string, std::less<>> kFunctionWords{
    "the", "and", "with", "for", "are", "is", "was", "its", "his", "her", "their", "this",
    "that", "from", "into", "onto", "some", "there", "near", "next", "has", "have", "of"};

struct TemplateCaption {
  std::string color1, shape1, color2, shape2;
  std::vector<std::string> relation;
};

std::optional<TemplateCaption> parse_template(std::span<const std::string> w) {
  if (w.size() != 7 && w.size() != 8) return std::nullopt;
  const std::size_t rel_len = w.size() - 6;
  if (w[0] != "a" || w[3 + rel_len] != "a") return std::nullopt;
  if (!kColors.contains(w[1]) || !kColors.contains(w[4 + rel_len])) return std::nullopt;
  if (!kShapes.contains(w[2]) || !kShapes.contains(w[5 + rel_len])) return std::nullopt;
  std::vector<std::string> rel(w.begin() + 3, w.begin() + 3 + static_cast<std::ptrdiff_t>(rel_len));
  const bool ok = rel_len == 1 ? (rel[0] == "above" || rel[0] == "below")
                               : ((rel[0] == "left" || rel[0] == "right") && rel[1] == "of");
  if (!ok) return std::nullopt;
  return TemplateCaption{w[1], w[2], w[4 + rel_len], w[5 + rel_len], rel};
}

std::vector<std::string> inverse_relation(const std::vector<std::string>& rel) {
  if (rel[0] == "above") return {"below"};
  if (rel[0] == "below") return {"above"};
  if (rel[0] == "left") return {"right", "of"};
  return {"left", "of"};
}

struct Example {
  std::vector<std::size_t> target;
  std::optional<std::size_t> guide;
};

Example draw_example(const CaptionModel& model, const CaptionedImage& item, double guided_fraction,
                     Rng& rng) {
  const auto& caption = item.captions[rng.below(item.captions.size())];
  const auto words = tokenize(caption);
  const std::size_t max_len = model.config.max_caption_tokens;
  if (rng.bernoulli(guided_fraction)) {
    if (auto gt = guided_target(words, rng)) {
      if (auto id = model.vocab.find(gt->guide)) {
        return {encode_words(model.vocab, gt->words, max_len), *id};
      }
    }
  }
  return {encode_words(model.vocab, words, max_len), std::nullopt};
}

}  // namespace

void validate(const TrainConfig& c) {
  if (c.epochs == 0) throw ParameterError("epochs must be positive");
  if (c.batch_size == 0) throw ParameterError("batch_size must be positive");
  if (!(c.learning_rate >= 0)) throw ParameterError("learning_rate must be >= 0");
  if (!(c.grad_clip_norm > 0)) throw ParameterError("grad_clip_norm must be positive");
  if (!(c.guided_step_fraction >= 0 && c.guided_step_fraction <= 1)) {
    throw ParameterError("guided_step_fraction must lie in [0, 1]");
  }
  if (!(c.heldout_fraction >= 0 && c.heldout_fraction < 1)) {
    throw ParameterError("heldout_fraction must lie in [0, 1)");
  }
  if (c.min_count == 0) throw ParameterError("min_count must be >= 1");
}

std::optional<GuidedTarget> guided_target(std::span<const std::string> words, Rng& rng) {
  if (auto t = parse_template(words)) {
    // The guided object's description opens the target: "C_k S_k REL' a C_o S_o".
    // Its color cannot be read off the guide word, so the first prediction
    // depends on attending to the guided object.
    const bool first = rng.below(2) == 0;
    GuidedTarget out;
    out.guide = first ? t->shape1 : t->shape2;
    const auto rel = first ? t->relation : inverse_relation(t->relation);
    out.words = {first ? t->color1 : t->color2, out.guide};
    out.words.insert(out.words.end(), rel.begin(), rel.end());
    out.words.insert(out.words.end(), {"a", first ? t->color2 : t->color1, first ? t->shape2 : t->shape1});
    return out;
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i].size() >= 3 && !kFunctionWords.contains(words[i])) candidates.push_back(i);
  }
  if (candidates.empty()) return std::nullopt;
  const std::size_t start = candidates[rng.below(candidates.size())];
  return GuidedTarget{words[start], {words.begin() + static_cast<std::ptrdiff_t>(start), words.end()}};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_corpus(std::size_t n,
                                                                           double heldout_fraction,
                                                                           std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t heldout = 0;
  if (heldout_fraction > 0) {
    heldout = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(heldout_fraction * static_cast<double>(n))));
  }
  if (heldout >= n) throw DataError("corpus of " + std::to_string(n) + " items is too small to split");
  Rng rng(seed ^ 0x5B117ULL);
  rng.shuffle(order);
  std::vector<std::size_t> held(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(heldout));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(heldout), order.end());
  std::sort(held.begin(), held.end());
  std::sort(train.begin(), train.end());
  return {train, held};
}

double evaluate_loss(const CaptionModel& model, std::span<const CaptionedImage> corpus,
                     std::span<const std::size_t> indices) {
  if (indices.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  std::size_t count = 0;
  for (auto i : indices) {
    for (const auto& caption : corpus[i].captions) {
      Tape tape = Tape::inference();
      const auto ids = encode_caption(model.vocab, caption, model.config.max_caption_tokens);
      total += sequence_loss(tape, model, corpus[i].pixels, ids).item();
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

LossCurve train_model(CaptionModel& model, const TrainConfig& config,
                      std::span<const CaptionedImage> corpus,
                      std::span<const std::size_t> train_indices,
                      std::span<const std::size_t> heldout_indices, const EpochCallback& on_epoch) {
  validate(config);
  if (train_indices.empty()) throw DataError("no training items");
  std::vector<Tensor> params;
  for (auto& [name, t] : model.named_parameters()) params.push_back(t);
  Adam adam(params, {config.learning_rate, 0.9, 0.999, 1e-8});
  Rng rng(config.seed * 0x2545F4914F6CDD1DULL + 17);

  model.zero_grad();
  LossCurve curve;
  std::vector<std::size_t> order(train_indices.begin(), train_indices.end());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - begin);
      for (std::size_t k = 0; k < count; ++k) {
        const auto& item = corpus[order[begin + k]];
        const Example ex = draw_example(model, item, config.guided_step_fraction, rng);
        Tape tape;
        Tensor loss = sequence_loss(tape, model, item.pixels, ex.target, ex.guide);
        epoch_total += loss.item();
        tape.backward(ops::affine(tape, loss, 1.0 / static_cast<double>(count)));
      }
      clip_grad_norm(params, config.grad_clip_norm);
      adam.step();
      model.zero_grad();
    }
    const double train_loss = epoch_total / static_cast<double>(order.size());
    const double heldout_loss = evaluate_loss(model, corpus, heldout_indices);
    curve.train.push_back(train_loss);
    curve.heldout.push_back(heldout_loss);
    spdlog::debug("epoch {}/{}: train {:.5f} heldout {:.5f}", epoch + 1, config.epochs, train_loss,
                  heldout_loss);
    if (on_epoch) on_epoch(epoch, train_loss, heldout_loss);
  }
  return curve;
}

TrainResult train(const TrainConfig& config, std::span<const CaptionedImage> corpus,
                  const EpochCallback& on_epoch) {
  validate(config);
  if (corpus.empty()) throw DataError("train: empty corpus");
  std::vector<std::string> captions;
  for (const auto& item : corpus) {
    if (item.captions.empty()) throw DataError("train: corpus item without captions");
    captions.insert(captions.end(), item.captions.begin(), item.captions.end());
  }
  TrainResult result;
  auto [train_idx, held_idx] = split_corpus(corpus.size(), config.heldout_fraction, config.seed);
  result.train_indices = std::move(train_idx);
  result.heldout_indices = std::move(held_idx);
  result.model = init_model(config.model, build_vocabulary(captions, config.min_count), config.seed);
  result.curve = train_model(result.model, config, corpus, result.train_indices,
                             result.heldout_indices, on_epoch);
  return result;
}

void write_curve_csv(const std::filesystem::path& path, const LossCurve& curve) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "epoch,train_loss,heldout_loss\n";
  for (std::size_t i = 0; i < curve.train.size(); ++i) {
    out << i + 1 << ',' << curve.train[i] << ',' << curve.heldout[i] << '\n';
  }
}

double relative_gap(double value, double reference) {
  return std::abs(value - reference) / reference;
}

ComparisonReport compare_environments(const TrainConfig& base, std::span<const CaptionedImage> bright,
                                      std::span<const CaptionedImage> dark,
                                      std::span<const CaptionedImage> mixed) {
  if (bright.size() != dark.size() || bright.size() != mixed.size()) {
    throw ParameterError("compare_environments: corpora sizes differ (" +
                         std::to_string(bright.size()) + ", " + std::to_string(dark.size()) + ", " +
                         std::to_string(mixed.size()) + ")");
  }
  ComparisonReport report;
  const std::array<std::pair<const char*, std::span<const CaptionedImage>>, 3> envs{
      {{"bright", bright}, {"dark", dark}, {"mixed", mixed}}};
  for (std::size_t k = 0; k < 3; ++k) {
    spdlog::info("training {} environment", envs[k].first);
    TrainResult r = train(base, envs[k].second);
    auto& run = report.runs[k];
    run.label = envs[k].first;
    run.curve = std::move(r.curve);
    run.final_train = run.curve.train.back();
    run.final_heldout = run.curve.heldout.back();
    report.models.push_back(std::move(r.model));
  }
  auto gap = [&](std::size_t env, std::size_t ref) {
    return LossGap{report.runs[env].label, report.runs[ref].label,
                   relative_gap(report.runs[env].final_heldout, report.runs[ref].final_heldout),
                   relative_gap(report.runs[env].final_train, report.runs[ref].final_train)};
  };
  report.gaps = {gap(1, 0), gap(2, 0), gap(1, 2)};
  return report;
}

nlohmann::json to_json(const ComparisonReport& report) {
  nlohmann::json out;
  for (const auto& run : report.runs) {
    out["runs"].push_back({{"environment", run.label},
                           {"train_loss", run.curve.train},
                           {"heldout_loss", run.curve.heldout},
                           {"final_train_loss", run.final_train},
                           {"final_heldout_loss", run.final_heldout}});
  }
  for (const auto& g : report.gaps) {
    out["gaps"].push_back({{"environment", g.environment},
                           {"reference", g.reference},
                           {"heldout_relative_gap", g.heldout},
                           {"train_relative_gap", g.train}});
  }
  return out;
}

}  // namespace nightcap

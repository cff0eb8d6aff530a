#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nightcap/dataset.hpp"
#include "nightcap/model.hpp"
#include "nightcap/random.hpp"

namespace nightcap {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 1;
  double learning_rate = 5e-4;
  double grad_clip_norm = 5.0;
  std::uint64_t seed = 1;
  Darkness darkness = Darkness::dark();  // recorded in reports; corpora arrive pre-built
  /// Fraction of training examples that carry a guide word.
  double guided_step_fraction = 0.5;
  double heldout_fraction = 0.1;
  std::size_t min_count = 1;
  ModelConfig model;
};

/// Throws ParameterError when a field is out of range.
void validate(const TrainConfig& config);

struct LossCurve {
  std::vector<double> train;    // per-epoch mean training loss
  std::vector<double> heldout;  // per-epoch mean held-out loss (unguided)
};

struct TrainResult {
  CaptionModel model;
  LossCurve curve;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> heldout_indices;
};

/// Caption words paired with the guide word they were rewritten around.
struct GuidedTarget {
  std::string guide;
  std::vector<std::string> words;
};

/// Picks a guide noun from a caption and rewrites the caption around it.
/// Template scene captions ("a C1 S1 REL a C2 S2") become
/// "C_k S_k REL' a C_other S_other" for a uniformly chosen object k; other
/// captions keep their suffix from a uniformly chosen content word. Nullopt
/// when nothing qualifies.
std::optional<GuidedTarget> guided_target(std::span<const std::string> words, Rng& rng);

/// Held-out split of max(1, round(fraction * n)) items, deterministic in seed.
/// The split is empty when fraction is 0.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_corpus(std::size_t n,
                                                                           double heldout_fraction,
                                                                           std::uint64_t seed);

using EpochCallback = std::function<void(std::size_t epoch, double train_loss, double heldout_loss)>;

/// Builds the vocabulary from every caption, initializes from config.seed and
/// runs Adam with global-norm clipping.
TrainResult train(const TrainConfig& config, std::span<const CaptionedImage> corpus,
                  const EpochCallback& on_epoch = {});

/// Continues training an existing model on the given indices.
LossCurve train_model(CaptionModel& model, const TrainConfig& config,
                      std::span<const CaptionedImage> corpus,
                      std::span<const std::size_t> train_indices,
                      std::span<const std::size_t> heldout_indices, const EpochCallback& on_epoch = {});

/// Mean unguided sequence loss over every caption of the selected items.
double evaluate_loss(const CaptionModel& model, std::span<const CaptionedImage> corpus,
                     std::span<const std::size_t> indices);

void write_curve_csv(const std::filesystem::path& path, const LossCurve& curve);

struct EnvironmentRun {
  std::string label;
  LossCurve curve;
  double final_train = 0.0;
  double final_heldout = 0.0;
};

struct LossGap {
  std::string environment;
  std::string reference;
  double heldout = 0.0;  // |L_env - L_ref| / L_ref on held-out loss
  double train = 0.0;    // same on training loss
};

struct ComparisonReport {
  std::array<EnvironmentRun, 3> runs;  // bright, dark, mixed
  std::array<LossGap, 3> gaps;         // dark/bright, mixed/bright, dark/mixed
  std::vector<CaptionModel> models;    // same order as runs

  const LossGap& dark_vs_bright() const { return gaps[0]; }
};

double relative_gap(double value, double reference);

/// Trains three identically configured models that differ only in corpus.
/// Throws ParameterError unless the corpora have equal size.
ComparisonReport compare_environments(const TrainConfig& base, std::span<const CaptionedImage> bright,
                                      std::span<const CaptionedImage> dark,
                                      std::span<const CaptionedImage> mixed);

nlohmann::json to_json(const ComparisonReport& report);

}  // namespace nightcap

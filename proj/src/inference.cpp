#include "nightcap/inference.hpp"

#include <algorithm>

#include "nightcap/error.hpp"
#include "nightcap/image.hpp"

namespace nightcap {

namespace {

std::size_t argmax_lowest(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

CaptionResult greedy_decode(const CaptionModel& model, const Tensor& image,
                            std::optional<std::size_t> guide_id, bool bias_on,
                            std::optional<std::size_t> forced_first) {
  Tape tape = Tape::inference();
  const EncodedImage enc = encode_image(tape, model, image);
  std::optional<Tensor> bias;
  if (guide_id && bias_on) {
    bias = guide_bias(tape, model.attention, guide_embedding(tape, model.decoder, *guide_id));
  }
  CaptionResult result;
  result.trace.grid_side = enc.grid.grid_side;
  Tensor state = enc.state0;
  std::size_t prev = Vocabulary::kStart;
  for (std::size_t t = 0; t < model.config.max_decode_len; ++t) {
    AttentionStep att = attend_projected(tape, model.attention, enc.grid, enc.keys, state,
                                         bias ? &*bias : nullptr);
    DecoderStep out = step(tape, model.decoder, prev, state, att.context);
    std::size_t id = argmax_lowest(out.logits.data());
    if (t == 0 && forced_first) id = *forced_first;
    if (id == Vocabulary::kEnd) break;
    result.token_ids.push_back(id);
    result.trace.tokens.push_back(model.vocab.word(id));
    result.trace.grids.emplace_back(att.weights.data().begin(), att.weights.data().end());
    prev = id;
    state = out.new_state;
  }
  for (const auto& tok : result.trace.tokens) {
    if (!result.caption.empty()) result.caption += ' ';
    result.caption += tok;
  }
  return result;
}

}  // namespace

CaptionResult caption_auto(const CaptionModel& model, const Tensor& image) {
  CaptionResult r = greedy_decode(model, image, std::nullopt, false, std::nullopt);
  r.mode = CaptionMode::automatic;
  return r;
}

CaptionResult caption_interactive(const CaptionModel& model, const Tensor& image,
                                  std::string_view guide_word, const InteractiveOptions& options) {
  const auto tokens = tokenize(guide_word);
  if (tokens.empty()) throw ParameterError("guide word must be nonempty");
  std::optional<std::size_t> id;
  if (tokens.size() == 1) id = model.vocab.find(tokens[0]);
  if (id && *id < Vocabulary::kReserved) id.reset();
  const bool degraded = !id.has_value();
  const std::size_t guide_id = id.value_or(Vocabulary::kUnk);

  std::optional<std::size_t> forced;
  if (options.prefix_forcing && !degraded) forced = guide_id;
  CaptionResult r = greedy_decode(model, image, guide_id, options.attention_bias, forced);
  r.mode = CaptionMode::interactive;
  r.degraded_guide = degraded;
  r.trace.guide_word = degraded ? std::string(guide_word) : tokens[0];
  return r;
}

nlohmann::json trace_to_json(const AttentionTrace& trace) {
  nlohmann::json grids = nlohmann::json::array();
  const std::size_t side = trace.grid_side;
  for (const auto& g : trace.grids) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < side; ++r) {
      rows.push_back(std::vector<double>(g.begin() + static_cast<std::ptrdiff_t>(r * side),
                                         g.begin() + static_cast<std::ptrdiff_t>((r + 1) * side)));
    }
    grids.push_back(std::move(rows));
  }
  nlohmann::json out = {{"tokens", trace.tokens}, {"grids", std::move(grids)}};
  out["guide"] = trace.guide_word ? nlohmann::json(*trace.guide_word) : nlohmann::json(nullptr);
  return out;
}

AttentionTrace trace_from_json(const nlohmann::json& json) {
  try {
    AttentionTrace trace;
    trace.tokens = json.at("tokens").get<std::vector<std::string>>();
    const auto& grids = json.at("grids");
    if (!grids.is_array() || grids.size() != trace.tokens.size()) {
      throw DataError("trace: grids must be an array with one grid per token");
    }
    for (const auto& g : grids) {
      const auto rows = g.get<std::vector<std::vector<double>>>();
      if (trace.grid_side == 0) trace.grid_side = rows.size();
      if (rows.size() != trace.grid_side) throw DataError("trace: grids differ in size");
      std::vector<double> flat;
      for (const auto& row : rows) {
        if (row.size() != trace.grid_side) throw DataError("trace: grid is not square");
        flat.insert(flat.end(), row.begin(), row.end());
      }
      trace.grids.push_back(std::move(flat));
    }
    if (json.contains("guide") && !json["guide"].is_null()) {
      trace.guide_word = json["guide"].get<std::string>();
    }
    return trace;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("trace: ") + e.what());
  }
}

std::vector<double> heat_map(std::span<const double> grid, std::size_t grid_side, std::size_t size) {
  if (grid.size() != grid_side * grid_side || grid_side == 0) {
    throw DimensionError("heat_map: grid of " + std::to_string(grid.size()) +
                         " values is not " + std::to_string(grid_side) + " squared");
  }
  Tensor cells = Tensor::from({1, grid_side, grid_side}, {grid.begin(), grid.end()});
  Tensor up = resize_bilinear(cells, size, size);
  std::vector<double> heat(up.data().begin(), up.data().end());
  const double peak = *std::max_element(heat.begin(), heat.end());
  if (peak > 0) {
    for (auto& v : heat) v /= peak;
  }
  return heat;
}

std::vector<Tensor> render_trace(const AttentionTrace& trace, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2)) {
    throw DimensionError("render_trace: expected a 3xSxS image, got " + to_string(image.shape()));
  }
  const std::size_t size = image.dim(1), plane = size * size;
  std::vector<Tensor> overlays;
  for (const auto& g : trace.grids) {
    const auto heat = heat_map(g, trace.grid_side, size);
    std::vector<double> px(3 * plane);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) px[c * plane + i] = 0.5 * image[c * plane + i] + 0.5 * heat[i];
    }
    overlays.push_back(Tensor::from({3, size, size}, std::move(px)));
  }
  return overlays;
}

double region_mass(std::span<const double> grid, std::size_t grid_side, const Region& region,
                   std::size_t image_size) {
  const std::size_t cell = image_size / grid_side;
  double mass = 0.0;
  for (std::size_t r = 0; r < grid_side; ++r) {
    for (std::size_t c = 0; c < grid_side; ++c) {
      const bool rows = r * cell < region.bottom && (r + 1) * cell > region.top;
      const bool cols = c * cell < region.right && (c + 1) * cell > region.left;
      if (rows && cols) mass += grid[r * grid_side + c];
    }
  }
  return mass;
}

}  // namespace nightcap

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nightcap/dataset.hpp"
#include "nightcap/model.hpp"

namespace nightcap {

/// One attention grid (grid_side² weights, row-major) per emitted token.
struct AttentionTrace {
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> grids;
  std::size_t grid_side = 0;
  std::optional<std::string> guide_word;
};

enum class CaptionMode { automatic, interactive };

struct CaptionResult {
  std::string caption;  // tokens joined by spaces, END excluded
  AttentionTrace trace;
  CaptionMode mode = CaptionMode::automatic;
  std::vector<std::size_t> token_ids;
  /// Guide word was out of vocabulary and fell back to UNK.
  bool degraded_guide = false;
};

struct InteractiveOptions {
  /// Add the guide-word bias to every attention score.
  bool attention_bias = true;
  /// Force the first emitted token to be the guide word.
  bool prefix_forcing = true;
};

/// Greedy decoding from START until END or max_decode_len tokens; argmax ties
/// go to the lowest id.
CaptionResult caption_auto(const CaptionModel& model, const Tensor& image);

/// Guided decoding. An out-of-vocabulary guide uses the UNK embedding, sets
/// degraded_guide and skips prefix forcing. Throws ParameterError when the
/// guide word is empty.
CaptionResult caption_interactive(const CaptionModel& model, const Tensor& image,
                                  std::string_view guide_word, const InteractiveOptions& options = {});

nlohmann::json trace_to_json(const AttentionTrace& trace);
/// Throws DataError on schema violations.
AttentionTrace trace_from_json(const nlohmann::json& json);

/// Grid bilinearly upsampled to size×size and scaled so its peak is 1.
std::vector<double> heat_map(std::span<const double> grid, std::size_t grid_side, std::size_t size);

/// Per token: 0.5 * image + 0.5 * grayscale heat map.
std::vector<Tensor> render_trace(const AttentionTrace& trace, const Tensor& image);

/// Total weight of grid cells that overlap a pixel region of an image_size² image.
double region_mass(std::span<const double> grid, std::size_t grid_side, const Region& region,
                   std::size_t image_size);

}  // namespace nightcap

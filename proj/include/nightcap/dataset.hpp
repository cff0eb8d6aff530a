#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nightcap/tensor.hpp"

namespace nightcap {

enum class ObjectShape { circle, square, triangle };
enum class ObjectColor { red, green, blue, yellow };

std::string_view name(ObjectShape shape);
std::string_view name(ObjectColor color);

struct GridCell {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

/// Pixel bounding box, half-open: rows [top, bottom), columns [left, right).
struct Region {
  std::size_t top = 0, left = 0, bottom = 0, right = 0;
  bool contains(std::size_t y, std::size_t x) const {
    return y >= top && y < bottom && x >= left && x < right;
  }
  friend bool operator==(const Region&, const Region&) = default;
};

struct SceneObject {
  ObjectShape shape = ObjectShape::circle;
  ObjectColor color = ObjectColor::red;
  GridCell cell;  // top-left cell of the object's 2x2-cell block
};

struct ObjectLayout {
  ObjectShape shape;
  ObjectColor color;
  Region region;  // exact bounds of the rendered pixels
};

/// Two objects; the caption mentions objects[0] first.
struct SceneSpec {
  std::uint64_t seed = 0;
  std::array<SceneObject, 2> objects;
};

struct CaptionedImage {
  Tensor pixels;  // [3×H×W] in [0,1]
  std::vector<std::string> captions;
  std::optional<std::array<ObjectLayout, 2>> meta;
};

inline constexpr std::size_t kSceneSize = 64;
inline constexpr std::size_t kSceneGrid = 8;
inline constexpr std::size_t kObjectCells = 2;
inline constexpr double kDefaultDarkFactor = 0.2;

/// "above", "below", "left of" or "right of": where `a` sits relative to `b`.
/// Column offsets win ties.
std::string spatial_relation(const SceneObject& a, const SceneObject& b);
std::string scene_caption(const SceneSpec& spec);

/// Random two-object scene with distinct shapes, listed in shape order
/// (circle, square, triangle) so the first-mentioned object is determined by
/// the image alone.
SceneSpec random_scene_spec(std::uint64_t seed);

/// Renders the scene on a bright background. Throws SpecError when the
/// objects' blocks overlap or leave the grid.
CaptionedImage generate_scene(const SceneSpec& spec, std::size_t size = kSceneSize);

struct SensorNoise {
  double sigma = 0.01;
  std::uint64_t seed = 0;
};

/// Scales every pixel by factor in (0,1] and clamps to [0,1]; optional
/// additive Gaussian noise. Throws ParameterError for other factors.
CaptionedImage degrade_brightness(const CaptionedImage& image, double factor,
                                  const std::optional<SensorNoise>& noise = std::nullopt);
Tensor degrade_pixels(const Tensor& pixels, double factor,
                      const std::optional<SensorNoise>& noise = std::nullopt);

struct Darkness {
  enum class Kind { bright, dark, mixed };
  Kind kind = Kind::bright;
  double factor = kDefaultDarkFactor;

  static Darkness bright() { return {Kind::bright, 1.0}; }
  static Darkness dark(double factor = kDefaultDarkFactor) { return {Kind::dark, factor}; }
  static Darkness mixed(double factor = kDefaultDarkFactor) { return {Kind::mixed, factor}; }
  /// Accepts "bright", "dark" or "mixed".
  static Darkness parse(std::string_view kind, double factor = kDefaultDarkFactor);
  std::string label() const;
};

/// Scenes from seeds seed..seed+n-1. Dark degrades all; mixed degrades the
/// odd-indexed ones.
std::vector<CaptionedImage> make_corpus(std::size_t n, Darkness darkness, std::uint64_t seed);

/// Reads a JSON-lines manifest of {"image": <relative path>, "captions": [...]}.
/// Images are resized to image_size² and scaled to [0,1]; at most 5 captions
/// are kept.
std::vector<CaptionedImage> load_coco_style(const std::filesystem::path& manifest,
                                            std::size_t image_size = kSceneSize);

/// Writes img_NNNNN.png files plus manifest.jsonl into `dir`.
void export_corpus(std::span<const CaptionedImage> corpus, const std::filesystem::path& dir);

double mean_brightness(const Tensor& pixels);

}  // namespace nightcap

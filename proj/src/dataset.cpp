#include "nightcap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include "json.hpp"

#include "nightcap/error.hpp"
#include "nightcap/image.hpp"
#include "nightcap/random.hpp"

namespace nightcap {

namespace {

using Rgb = std::array<double, 3>;

Rgb base_color(ObjectColor color) {
  switch (color) {
    case ObjectColor::red: return {0.9, 0.1, 0.1};
    case ObjectColor::green: return {0.1, 0.75, 0.15};
    case ObjectColor::blue: return {0.1, 0.2, 0.9};
    case ObjectColor::yellow: return {0.9, 0.85, 0.1};
  }
  return {0, 0, 0};
}

bool blocks_overlap(const GridCell& a, const GridCell& b) {
  auto apart = [](std::size_t x, std::size_t y) { return (x > y ? x - y : y - x) >= kObjectCells; };
  return !(apart(a.row, b.row) || apart(a.col, b.col));
}

// Whether pixel (y, x) of a block whose top-left pixel is (top, left) and side
// `side` belongs to the shape. Pixel centers are sampled.
bool shape_covers(ObjectShape shape, double top, double left, double side, std::size_t y,
                  std::size_t x) {
  const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
  const double inset = side / 16.0;
  const double lo_y = top + inset, hi_y = top + side - inset;
  const double lo_x = left + inset, hi_x = left + side - inset;
  switch (shape) {
    case ObjectShape::square:
      return py > lo_y && py < hi_y && px > lo_x && px < hi_x;
    case ObjectShape::circle: {
      const double cy = top + side / 2, cx = left + side / 2, r = side / 2 - inset;
      return (py - cy) * (py - cy) + (px - cx) * (px - cx) <= r * r;
    }
    case ObjectShape::triangle: {
      if (py <= lo_y || py >= hi_y) return false;
      const double t = (py - lo_y) / (hi_y - lo_y);
      const double half = t * (hi_x - lo_x) / 2;
      return std::abs(px - (left + side / 2)) <= half;
    }
  }
  return false;
}

}  // namespace

std::string_view name(ObjectShape shape) {
  switch (shape) {
    case ObjectShape::circle: return "circle";
    case ObjectShape::square: return "square";
    case ObjectShape::triangle: return "triangle";
  }
  return "?";
}

std::string_view name(ObjectColor color) {
  switch (color) {
    case ObjectColor::red: return "red";
    case ObjectColor::green: return "green";
    case ObjectColor::blue: return "blue";
    case ObjectColor::yellow: return "yellow";
  }
  return "?";
}

std::string spatial_relation(const SceneObject& a, const SceneObject& b) {
  const auto dr = static_cast<long>(a.cell.row) - static_cast<long>(b.cell.row);
  const auto dc = static_cast<long>(a.cell.col) - static_cast<long>(b.cell.col);
  if (std::labs(dc) >= std::labs(dr)) return dc < 0 ? "left of" : "right of";
  return dr < 0 ? "above" : "below";
}

std::string scene_caption(const SceneSpec& spec) {
  const auto& [a, b] = spec.objects;
  std::string caption = "a ";
  caption += name(a.color);
  caption += ' ';
  caption += name(a.shape);
  caption += ' ' + spatial_relation(a, b) + " a ";
  caption += name(b.color);
  caption += ' ';
  caption += name(b.shape);
  return caption;
}

SceneSpec random_scene_spec(std::uint64_t seed) {
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0x5CE4E5ULL);
  SceneSpec spec;
  spec.seed = seed;
  std::size_t first = rng.below(3), second = rng.below(2);
  if (second >= first) ++second;
  if (second < first) std::swap(first, second);
  spec.objects[0].shape = static_cast<ObjectShape>(first);
  spec.objects[1].shape = static_cast<ObjectShape>(second);
  for (auto& obj : spec.objects) obj.color = static_cast<ObjectColor>(rng.below(4));
  const std::size_t span = kSceneGrid - kObjectCells + 1;
  spec.objects[0].cell = {rng.below(span), rng.below(span)};
  do {
    spec.objects[1].cell = {rng.below(span), rng.below(span)};
  } while (blocks_overlap(spec.objects[0].cell, spec.objects[1].cell));
  return spec;
}

CaptionedImage generate_scene(const SceneSpec& spec, std::size_t size) {
  if (size < kSceneGrid * 2 || size % kSceneGrid != 0) {
    throw SpecError("scene size must be a multiple of " + std::to_string(kSceneGrid) +
                    " and at least " + std::to_string(kSceneGrid * 2));
  }
  for (const auto& obj : spec.objects) {
    if (obj.cell.row + kObjectCells > kSceneGrid || obj.cell.col + kObjectCells > kSceneGrid) {
      throw SpecError("object at cell (" + std::to_string(obj.cell.row) + "," +
                      std::to_string(obj.cell.col) + ") does not fit the " +
                      std::to_string(kSceneGrid) + "x" + std::to_string(kSceneGrid) + " grid");
    }
  }
  if (blocks_overlap(spec.objects[0].cell, spec.objects[1].cell)) {
    throw SpecError("scene objects overlap");
  }

  Rng rng(spec.seed ^ 0xB16B00B5ULL);
  const double gray = rng.uniform(0.85, 0.95);
  Rgb background{};
  for (auto& c : background) c = gray + rng.uniform(-0.02, 0.02);
  const double slope = rng.uniform(-0.02, 0.02);

  const std::size_t h = size, w = size;
  std::vector<double> data(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const double shade = slope * (static_cast<double>(y) / static_cast<double>(h - 1) - 0.5);
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) data[(c * h + y) * w + x] = background[c] + shade;
    }
  }

  const double cell = static_cast<double>(size) / kSceneGrid;
  const double side = cell * kObjectCells;
  std::array<ObjectLayout, 2> layout{};
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& obj = spec.objects[k];
    Rgb color = base_color(obj.color);
    for (auto& c : color) c = std::clamp(c + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    const double top = static_cast<double>(obj.cell.row) * cell;
    const double left = static_cast<double>(obj.cell.col) * cell;
    Region region{h, w, 0, 0};
    for (auto y = static_cast<std::size_t>(top); y < static_cast<std::size_t>(top + side); ++y) {
      for (auto x = static_cast<std::size_t>(left); x < static_cast<std::size_t>(left + side); ++x) {
        if (!shape_covers(obj.shape, top, left, side, y, x)) continue;
        for (std::size_t c = 0; c < 3; ++c) data[(c * h + y) * w + x] = color[c];
        region.top = std::min(region.top, y);
        region.left = std::min(region.left, x);
        region.bottom = std::max(region.bottom, y + 1);
        region.right = std::max(region.right, x + 1);
      }
    }
    layout[k] = {obj.shape, obj.color, region};
  }

  CaptionedImage out;
  out.pixels = Tensor::from({3, h, w}, std::move(data));
  out.captions = {scene_caption(spec)};
  out.meta = layout;
  return out;
}

Tensor degrade_pixels(const Tensor& pixels, double factor, const std::optional<SensorNoise>& noise) {
  if (!(factor > 0.0 && factor <= 1.0)) {
    throw ParameterError("brightness factor must lie in (0, 1], got " + std::to_string(factor));
  }
  std::vector<double> data(pixels.data().begin(), pixels.data().end());
  std::optional<Rng> rng;
  if (noise) rng.emplace(noise->seed);
  for (auto& v : data) {
    v *= factor;
    if (rng) v += noise->sigma * rng->normal();
    v = std::clamp(v, 0.0, 1.0);
  }
  return Tensor::from(pixels.shape(), std::move(data));
}

CaptionedImage degrade_brightness(const CaptionedImage& image, double factor,
                                  const std::optional<SensorNoise>& noise) {
  CaptionedImage out = image;
  out.pixels = degrade_pixels(image.pixels, factor, noise);
  return out;
}

Darkness Darkness::parse(std::string_view kind, double factor) {
  if (kind == "bright") return bright();
  if (kind == "dark") return dark(factor);
  if (kind == "mixed") return mixed(factor);
  throw ParameterError("darkness must be bright, dark or mixed, got '" + std::string(kind) + "'");
}

std::string Darkness::label() const {
  switch (kind) {
    case Kind::bright: return "bright";
    case Kind::dark: return "dark";
    case Kind::mixed: return "mixed";
  }
  return "?";
}

std::vector<CaptionedImage> make_corpus(std::size_t n, Darkness darkness, std::uint64_t seed) {
  if (n == 0) throw ParameterError("make_corpus: n must be >= 1");
  if (darkness.kind != Darkness::Kind::bright && !(darkness.factor > 0.0 && darkness.factor <= 1.0)) {
    throw ParameterError("brightness factor must lie in (0, 1], got " + std::to_string(darkness.factor));
  }
  std::vector<CaptionedImage> corpus;
  corpus.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto item = generate_scene(random_scene_spec(seed + i));
    const bool darken = darkness.kind == Darkness::Kind::dark ||
                        (darkness.kind == Darkness::Kind::mixed && i % 2 == 1);
    if (darken) item = degrade_brightness(item, darkness.factor);
    corpus.push_back(std::move(item));
  }
  return corpus;
}

std::vector<CaptionedImage> load_coco_style(const std::filesystem::path& manifest,
                                            std::size_t image_size) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();
  std::vector<CaptionedImage> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest.string() + ":" + std::to_string(line_no);
    nlohmann::json entry;
    try {
      entry = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": malformed JSON: " + e.what());
    }
    if (!entry.is_object() || !entry.contains("image") || !entry["image"].is_string() ||
        !entry.contains("captions") || !entry["captions"].is_array()) {
      throw DataError(where + ": expected {\"image\": string, \"captions\": [string, ...]}");
    }
    CaptionedImage item;
    for (const auto& c : entry["captions"]) {
      if (!c.is_string()) throw DataError(where + ": captions must be strings");
      if (item.captions.size() < 5) item.captions.push_back(c.get<std::string>());
    }
    if (item.captions.empty()) throw DataError(where + ": captions list is empty");
    const auto path = base / entry["image"].get<std::string>();
    if (!std::filesystem::exists(path)) throw DataError(where + ": missing image file " + path.string());
    item.pixels = resize_bilinear(image_to_tensor(read_png(path)), image_size, image_size);
    items.push_back(std::move(item));
  }
  if (items.empty()) throw DataError("manifest " + manifest.string() + " has no entries");
  return items;
}

void export_corpus(std::span<const CaptionedImage> corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw Error("cannot write " + (dir / "manifest.jsonl").string());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    char file[32];
    std::snprintf(file, sizeof file, "img_%05zu.png", i);
    write_png(dir / file, tensor_to_image(corpus[i].pixels));
    nlohmann::json entry = {{"image", file}, {"captions", corpus[i].captions}};
    manifest << entry.dump() << '\n';
  }
}

double mean_brightness(const Tensor& pixels) {
  double total = 0.0;
  for (double v : pixels.data()) total += v;
  return total / static_cast<double>(pixels.size());
}

}  // namespace nightcap

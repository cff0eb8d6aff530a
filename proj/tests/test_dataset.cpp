#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "nightcap/dataset.hpp"
#include "nightcap/error.hpp"
#include "nightcap/image.hpp"
#include "nightcap/vocab.hpp"
#include "test_support.hpp"

using namespace nightcap;

namespace {

SceneSpec red_circle_blue_square() {
  SceneSpec spec;
  spec.seed = 3;
  spec.objects[0] = {ObjectShape::circle, ObjectColor::red, {1, 1}};
  spec.objects[1] = {ObjectShape::square, ObjectColor::blue, {6, 6}};
  return spec;
}

double px(const Tensor& t, std::size_t c, std::size_t y, std::size_t x) {
  return t[(c * t.dim(1) + y) * t.dim(2) + x];
}

}  // namespace

TEST(DegradeBrightness, ScalesEveryPixel) {
  CaptionedImage img{Tensor::from({3, 1, 1}, {0.8, 0.4, 1.0}), {"a dog"}, std::nullopt};
  const auto out = degrade_brightness(img, 0.25);
  EXPECT_DOUBLE_EQ(out.pixels[0], 0.2);
  EXPECT_DOUBLE_EQ(out.pixels[1], 0.1);
  EXPECT_DOUBLE_EQ(out.pixels[2], 0.25);
  EXPECT_EQ(out.captions, img.captions);
}

TEST(DegradeBrightness, FactorOneIsIdentity) {
  const auto img = generate_scene(random_scene_spec(9));
  const auto out = degrade_brightness(img, 1.0);
  EXPECT_TRUE(std::ranges::equal(out.pixels.data(), img.pixels.data()));
}

TEST(DegradeBrightness, FactorOutsideUnitIntervalIsParameterError) {
  const auto img = generate_scene(random_scene_spec(9));
  EXPECT_THROW(degrade_brightness(img, 0.0), ParameterError);
  EXPECT_THROW(degrade_brightness(img, -0.5), ParameterError);
  EXPECT_THROW(degrade_brightness(img, 1.01), ParameterError);
}

TEST(DegradeBrightness, MeanScalesLinearly) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = generate_scene(random_scene_spec(seed));
    const double before = mean_brightness(img.pixels);
    for (double f : {0.1, 0.2, 0.5, 0.9}) {
      EXPECT_NEAR(mean_brightness(degrade_brightness(img, f).pixels), f * before, 1e-12);
    }
  }
}

TEST(DegradeBrightness, ComposesMultiplicatively) {
  const auto img = generate_scene(random_scene_spec(2));
  const auto twice = degrade_brightness(degrade_brightness(img, 0.5), 0.4);
  const auto once = degrade_brightness(img, 0.2);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(twice.pixels[i], once.pixels[i], 1e-15);
}

TEST(DegradeBrightness, SensorNoiseIsSeededAndClamped) {
  const auto img = generate_scene(random_scene_spec(2));
  const SensorNoise noise{0.01, 5};
  const auto a = degrade_brightness(img, 0.2, noise), b = degrade_brightness(img, 0.2, noise);
  EXPECT_TRUE(std::ranges::equal(a.pixels.data(), b.pixels.data()));
  EXPECT_FALSE(std::ranges::equal(a.pixels.data(), degrade_brightness(img, 0.2).pixels.data()));
  const auto noisy = degrade_brightness(img, 0.01, SensorNoise{0.5, 1});
  for (double v : noisy.pixels.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(GenerateScene, SameSeedGivesIdenticalPixels) {
  const auto a = generate_scene(random_scene_spec(7)), b = generate_scene(random_scene_spec(7));
  EXPECT_TRUE(std::ranges::equal(a.pixels.data(), b.pixels.data()));
  EXPECT_EQ(a.captions, b.captions);
}

TEST(GenerateScene, RedCircleLeftOfBlueSquare) {
  const auto img = generate_scene(red_circle_blue_square());
  ASSERT_EQ(img.captions.size(), 1u);
  EXPECT_EQ(img.captions[0], "a red circle left of a blue square");
  ASSERT_TRUE(img.meta);
  const auto& circle = (*img.meta)[0].region;
  std::size_t inside = 0;
  for (std::size_t y = circle.top; y < circle.bottom; ++y) {
    for (std::size_t x = circle.left; x < circle.right; ++x) {
      // The region is the circle's bounding box; its corners are background.
      const double dy = y + 0.5 - (circle.top + circle.bottom) / 2.0;
      const double dx = x + 0.5 - (circle.left + circle.right) / 2.0;
      if (dy * dy + dx * dx > 0.25 * (circle.bottom - circle.top) * (circle.bottom - circle.top) * 0.8) continue;
      EXPECT_GT(px(img.pixels, 0, y, x), 0.5);
      EXPECT_LT(px(img.pixels, 2, y, x), 0.2);
      ++inside;
    }
  }
  EXPECT_GT(inside, 100u);
}

TEST(GenerateScene, RelationFollowsDominantAxis) {
  SceneObject a{ObjectShape::circle, ObjectColor::red, {0, 0}};
  SceneObject b{ObjectShape::square, ObjectColor::red, {4, 2}};
  EXPECT_EQ(spatial_relation(a, b), "above");
  EXPECT_EQ(spatial_relation(b, a), "below");
  b.cell = {2, 4};
  EXPECT_EQ(spatial_relation(a, b), "left of");
  EXPECT_EQ(spatial_relation(b, a), "right of");
}

TEST(GenerateScene, OverlappingObjectsAreSpecError) {
  auto spec = red_circle_blue_square();
  spec.objects[1].cell = {2, 2};
  EXPECT_THROW(generate_scene(spec), SpecError);
  spec.objects[1].cell = {7, 0};
  EXPECT_THROW(generate_scene(spec), SpecError);
}

TEST(GenerateScene, BrightBackgroundAndPixelRange) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto img = generate_scene(random_scene_spec(seed));
    EXPECT_EQ(img.pixels.shape(), (Shape{3, 64, 64}));
    for (double v : img.pixels.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    // Corners are never covered by an object's inset shape.
    for (auto [y, x] : {std::pair{0, 0}, {0, 63}, {63, 0}, {63, 63}}) {
      double lum = 0;
      for (std::size_t c = 0; c < 3; ++c) lum += px(img.pixels, c, y, x) / 3;
      EXPECT_GE(lum, 0.8);
    }
  }
}

TEST(GenerateScene, MetaRegionsBoundTheRenderedObjects) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto spec = random_scene_spec(seed);
    const auto img = generate_scene(spec);
    ASSERT_TRUE(img.meta);
    for (std::size_t k = 0; k < 2; ++k) {
      // Background is near-gray; objects are saturated. Find the colored
      // pixels inside the object's 16x16 block and bound them.
      const std::size_t top = spec.objects[k].cell.row * 8, left = spec.objects[k].cell.col * 8;
      Region found{64, 64, 0, 0};
      for (std::size_t y = top; y < top + 16; ++y) {
        for (std::size_t x = left; x < left + 16; ++x) {
          double lo = 1, hi = 0;
          for (std::size_t c = 0; c < 3; ++c) {
            lo = std::min(lo, px(img.pixels, c, y, x));
            hi = std::max(hi, px(img.pixels, c, y, x));
          }
          if (hi - lo < 0.3) continue;
          found.top = std::min(found.top, y);
          found.left = std::min(found.left, x);
          found.bottom = std::max(found.bottom, y + 1);
          found.right = std::max(found.right, x + 1);
        }
      }
      EXPECT_EQ(found, (*img.meta)[k].region) << "seed " << seed << " object " << k;
      EXPECT_EQ((*img.meta)[k].shape, spec.objects[k].shape);
    }
  }
}

TEST(MakeCorpus, BrightCorpusIsBright) {
  const auto corpus = make_corpus(10, Darkness::bright(), 1);
  ASSERT_EQ(corpus.size(), 10u);
  for (const auto& item : corpus) EXPECT_GE(mean_brightness(item.pixels), 0.5);
}

TEST(MakeCorpus, DarkCorpusIsScaledBright) {
  const auto bright = make_corpus(10, Darkness::bright(), 1);
  const auto dark = make_corpus(10, Darkness::dark(0.2), 1);
  double b = 0, d = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    b += mean_brightness(bright[i].pixels);
    d += mean_brightness(dark[i].pixels);
    EXPECT_EQ(dark[i].captions, bright[i].captions);
  }
  EXPECT_NEAR(d, 0.2 * b, 1e-12 * b);
}

TEST(MakeCorpus, MixedDarkensEveryOtherScene) {
  const auto bright = make_corpus(6, Darkness::bright(), 4);
  const auto mixed = make_corpus(6, Darkness::mixed(0.3), 4);
  for (std::size_t i = 0; i < 6; ++i) {
    const double ratio = mean_brightness(mixed[i].pixels) / mean_brightness(bright[i].pixels);
    EXPECT_NEAR(ratio, i % 2 == 1 ? 0.3 : 1.0, 1e-12);
  }
}

TEST(MakeCorpus, DeterministicAndValidated) {
  const auto a = make_corpus(5, Darkness::dark(), 11), b = make_corpus(5, Darkness::dark(), 11);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_TRUE(std::ranges::equal(a[i].pixels.data(), b[i].pixels.data()));
    EXPECT_EQ(a[i].captions, b[i].captions);
  }
  EXPECT_THROW(make_corpus(0, Darkness::bright(), 1), ParameterError);
  EXPECT_THROW(make_corpus(3, Darkness::dark(1.5), 1), ParameterError);
  EXPECT_THROW(Darkness::parse("dusk"), ParameterError);
}

TEST(MakeCorpus, TwentyScenesCoverTheTemplateVocabulary) {
  const std::set<std::string> expected{"a",      "red",    "green",    "blue",  "yellow", "circle", "square",
                                       "triangle", "above", "below", "left",   "right",  "of"};
  for (std::uint64_t seed : {1, 100, 5000}) {
    std::vector<std::string> captions;
    for (const auto& item : make_corpus(20, Darkness::bright(), seed)) captions.push_back(item.captions[0]);
    const auto words = build_vocabulary(captions).corpus_words();
    EXPECT_EQ(std::set<std::string>(words.begin(), words.end()), expected) << "seed " << seed;
  }
}

TEST(LoadCocoStyle, ReadsManifestAndResizes) {
  const auto dir = scratch_dir();
  write_png(dir / "a.png", tensor_to_image(Tensor::filled({3, 64, 64}, 0.5)));
  write_png(dir / "big.png", tensor_to_image(Tensor::filled({3, 128, 128}, 1.0)));
  std::ofstream(dir / "m.jsonl") << R"({"image":"a.png","captions":["a dog"]})" << "\n\n"
                                 << R"({"image":"big.png","captions":["1","2","3","4","5","6"]})" << "\n";
  const auto items = load_coco_style(dir / "m.jsonl");
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].captions, (std::vector<std::string>{"a dog"}));
  EXPECT_EQ(items[1].pixels.shape(), (Shape{3, 64, 64}));
  EXPECT_EQ(items[1].captions.size(), 5u);
  EXPECT_NEAR(items[0].pixels[0], 128.0 / 255.0, 1e-12);
}

TEST(LoadCocoStyle, ErrorsNameTheLineOrPath) {
  const auto dir = scratch_dir();
  write_png(dir / "a.png", tensor_to_image(Tensor::filled({3, 8, 8}, 0.5)));
  auto expect_error = [&](const std::string& body, const std::string& needle) {
    std::ofstream(dir / "m.jsonl") << body;
    try {
      load_coco_style(dir / "m.jsonl");
      ADD_FAILURE() << "expected DataError for " << body;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_error(R"({"image":"a.png","captions":[]})", "m.jsonl:1");
  expect_error("{\"image\":\"a.png\",\"captions\":[\"x\"]}\nnot json\n", "m.jsonl:2");
  expect_error(R"({"image":"missing.png","captions":["x"]})", "missing.png");
  expect_error(R"({"captions":["x"]})", "m.jsonl:1");
  EXPECT_THROW(load_coco_style(dir / "absent.jsonl"), DataError);
}

TEST(ExportCorpus, RoundTripsThroughTheManifest) {
  const auto dir = scratch_dir();
  const auto corpus = make_corpus(3, Darkness::bright(), 2);
  export_corpus(corpus, dir);
  const auto loaded = load_coco_style(dir / "manifest.jsonl");
  ASSERT_EQ(loaded.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(loaded[i].captions, corpus[i].captions);
    for (std::size_t j = 0; j < corpus[i].pixels.size(); ++j) {
      EXPECT_NEAR(loaded[i].pixels[j], corpus[i].pixels[j], 0.5 / 255.0 + 1e-12);
    }
  }
}

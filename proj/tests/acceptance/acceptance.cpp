// End-to-end acceptance run. Prints one PASS/FAIL line per criterion, with the
// measured numbers, and exits nonzero when any criterion fails.

#include <cstring>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "nightcap/checkpoint.hpp"
#include "nightcap/dataset.hpp"
#include "nightcap/gradcheck.hpp"
#include "nightcap/image.hpp"
#include "nightcap/inference.hpp"
#include "nightcap/server.hpp"
#include "nightcap/trainer.hpp"

using namespace nightcap;
using nlohmann::json;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& criterion, const Outcome& o) {
  std::printf("%s  %s: %s\n", o.passed ? "PASS" : "FAIL", criterion.c_str(), o.detail.c_str());
  std::fflush(stdout);
  if (!o.passed) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

constexpr std::size_t kTestScenes = 50;
constexpr std::uint64_t kTestSeed = 900000;

Outcome gradient_integrity() {
  const auto report = run_gradcheck();
  const bool ok = report.passed() && report.trials() >= 100 && report.seconds < 120;
  return {ok, fmt("%zu cases, %zu randomized trials, max relative error %.2e (limit 1e-4), %.1f s", report.cases.size(),
                  report.trials(), report.max_error(), report.seconds)};
}

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  auto corpus = make_corpus(8, Darkness::dark(), 4242);
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  cfg.heldout_fraction = 0;
  cfg.guided_step_fraction = 0;
  cfg.seed = 7;
  const auto result = train(cfg, corpus);
  const std::size_t steps = cfg.epochs * ((corpus.size() + cfg.batch_size - 1) / cfg.batch_size);
  std::vector<std::size_t> all(corpus.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const double loss = evaluate_loss(result.model, corpus, all);
  std::size_t exact = 0;
  for (const auto& item : corpus) exact += caption_auto(result.model, item.pixels).caption == item.captions[0];
  const bool ok = steps <= 500 && loss < 0.05 && exact == corpus.size();
  return {ok, fmt("%zu steps, loss %.4f (limit 0.05), %zu/%zu captions exact, %.1f s", steps, loss, exact,
                  corpus.size(), seconds_since(t0))};
}

struct ParityRun {
  std::uint64_t seed;
  ComparisonReport report;
};

Outcome parity(std::vector<ParityRun>& runs) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> gaps;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    TrainConfig cfg;
    cfg.seed = seed;
    const auto bright = make_corpus(200, Darkness::bright(), seed);
    const auto dark = make_corpus(200, Darkness::dark(), seed);
    const auto mixed = make_corpus(200, Darkness::mixed(), seed);
    auto rep = compare_environments(cfg, bright, dark, mixed);
    const auto& g = rep.dark_vs_bright();
    gaps.push_back(g.heldout);
    per_seed += fmt(" seed %llu: bright %.4f dark %.4f mixed %.4f gap %.4f (train gap %.4f);",
                    static_cast<unsigned long long>(seed), rep.runs[0].final_heldout, rep.runs[1].final_heldout,
                    rep.runs[2].final_heldout, g.heldout, g.train);
    runs.push_back({seed, std::move(rep)});
  }
  std::vector<double> sorted = gaps;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[1];
  const double elapsed = seconds_since(t0);
  return {median <= 0.10 && elapsed < 1800,
          fmt("median dark-vs-bright held-out gap %.4f (limit 0.10), %.0f s;", median, elapsed) + per_seed};
}

Outcome attention_shift(const CaptionModel& model, const std::vector<CaptionedImage>& scenes) {
  std::vector<double> deltas;
  for (const auto& item : scenes) {
    const auto& second = (*item.meta)[1];
    const auto guided = caption_interactive(model, item.pixels, name(second.shape));
    const auto automatic = caption_auto(model, item.pixels);
    deltas.push_back(region_mass(guided.trace.grids[0], 8, second.region, 64) -
                     region_mass(automatic.trace.grids[0], 8, second.region, 64));
  }
  const auto up = std::count_if(deltas.begin(), deltas.end(), [](double d) { return d > 0; });
  double mean = 0;
  for (double d : deltas) mean += d;
  mean /= static_cast<double>(deltas.size());
  std::vector<double> s = deltas;
  std::sort(s.begin(), s.end());
  auto q = [&](double p) { return s[static_cast<std::size_t>(std::lround(p * static_cast<double>(s.size() - 1)))]; };
  const double share = static_cast<double>(up) / static_cast<double>(deltas.size());
  return {share >= 0.70 && mean > 0,
          fmt("mass increased in %ld/%zu scenes (%.0f%%, limit 70%%), mean increase %+.3f; "
              "min %+.3f q25 %+.3f median %+.3f q75 %+.3f max %+.3f",
              static_cast<long>(up), deltas.size(), 100 * share, mean, s.front(), q(0.25), q(0.5), q(0.75), s.back())};
}

Outcome sentence_completion(const CaptionModel& model, const std::vector<CaptionedImage>& scenes,
                            double& worst_grid_error, std::size_t& grids_checked) {
  std::size_t total = 0, ok = 0;
  auto check_grids = [&](const CaptionResult& r) {
    for (const auto& g : r.trace.grids) {
      double sum = 0;
      for (double w : g) {
        sum += w;
        if (w < 0) worst_grid_error = std::max(worst_grid_error, -w);
      }
      worst_grid_error = std::max(worst_grid_error, std::abs(sum - 1));
      ++grids_checked;
    }
  };
  for (const auto& item : scenes) {
    check_grids(caption_auto(model, item.pixels));
    for (const auto& word : model.vocab.corpus_words()) {
      const auto r = caption_interactive(model, item.pixels, word);
      check_grids(r);
      ++total;
      ok += !r.trace.tokens.empty() && r.trace.tokens.front() == word;
    }
  }
  return {ok == total, fmt("%zu/%zu guided captions start with the guide word (%zu words x %zu scenes)", ok, total,
                           model.vocab.corpus_words().size(), scenes.size())};
}

Outcome determinism(const CaptionModel& model, const std::vector<CaptionedImage>& scenes, double worst_grid_error,
                    std::size_t grids_checked) {
  auto corpus = make_corpus(10, Darkness::dark(), 77);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 5;
  const auto run_a = train(cfg, corpus);
  const auto run_b = train(cfg, corpus);
  bool train_same = serialize_checkpoint(run_a.model) == serialize_checkpoint(run_b.model);
  const auto pa = run_a.model.named_parameters();
  const auto pb = run_b.model.named_parameters();
  train_same = train_same && pa.size() == pb.size();
  for (std::size_t i = 0; train_same && i < pa.size(); ++i) {
    const auto va = pa[i].second.data();
    const auto vb = pb[i].second.data();
    train_same = va.size() == vb.size() && std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) == 0;
  }

  bool decode_same = true;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto r1 = caption_interactive(model, scenes[i].pixels, "square");
    const auto r2 = caption_interactive(model, scenes[i].pixels, "square");
    decode_same = decode_same && r1.token_ids == r2.token_ids && r1.trace.grids == r2.trace.grids;
  }

  const auto bytes = serialize_checkpoint(model);
  const auto resaved = serialize_checkpoint(deserialize_checkpoint(bytes));
  const bool resave_same = bytes == resaved;

  const bool simplex = worst_grid_error <= 1e-6 && grids_checked > 0;
  return {train_same && decode_same && resave_same && simplex,
          fmt("%zu attention grids, worst simplex deviation %.1e (limit 1e-6); training rerun %s; decode rerun %s; "
              "checkpoint re-save %s (%zu bytes)",
              grids_checked, worst_grid_error, train_same ? "bit-identical" : "DIFFERS",
              decode_same ? "bit-identical" : "DIFFERS", resave_same ? "byte-identical" : "DIFFERS", bytes.size())};
}

Outcome api_contract(const CaptionModel& model, const CaptionedImage& scene) {
  HttpServer server(model.clone());
  const int port = server.bind("127.0.0.1", 0);
  std::thread serving([&] { server.serve(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  std::vector<std::string> failed;
  std::size_t checks = 0;
  auto expect = [&](bool cond, const std::string& what) {
    ++checks;
    if (!cond) failed.push_back(what);
  };
  auto post = [&](const std::string& path, const std::string& body) {
    return client.Post(path, body, "application/json");
  };
  auto error_shape = [](const httplib::Result& r) {
    if (!r || r->status != 400) return false;
    const auto j = json::parse(r->body, nullptr, false);
    return j.is_object() && j.contains("code") && j["code"].is_string() && j.contains("message") &&
           j["message"].is_string();
  };

  const RgbImage image = tensor_to_image(scene.pixels);
  const std::string b64 = base64_encode(encode_png(image));

  auto health = client.Get("/api/health");
  expect(health && health->status == 200 && json::parse(health->body)["status"] == "ok" &&
             json::parse(health->body)["model_id"] == model_id(model),
         "health");

  auto vocab = client.Get("/api/vocab");
  expect(vocab && vocab->status == 200 && json::parse(vocab->body)["words"] == json(model.vocab.corpus_words()),
         "vocab");

  auto guided = post("/api/caption", json{{"image", b64}, {"guide_word", "square"}}.dump());
  bool caption_ok = guided && guided->status == 200;
  if (caption_ok) {
    const auto j = json::parse(guided->body);
    const auto& tokens = j["tokens"];
    caption_ok = j["caption"].get<std::string>().starts_with("square") && j["guide_used"] == "square" &&
                 j["degraded_guide"] == false && j["grids"].size() == tokens.size() && tokens.size() > 0;
    for (const auto& grid : j["grids"]) {
      double sum = 0;
      for (const auto& row : grid) {
        for (double w : row) sum += w;
      }
      caption_ok = caption_ok && grid.size() == 8 && std::abs(sum - 1) <= 1e-6;
    }
  }
  expect(caption_ok, "caption guided");

  auto unguided = post("/api/caption", json{{"image", b64}}.dump());
  expect(unguided && unguided->status == 200 &&
             json::parse(unguided->body)["caption"] == caption_auto(model, image_to_tensor(image)).caption,
         "caption unguided");

  auto oov = post("/api/caption", json{{"image", b64}, {"guide_word", "zebra"}}.dump());
  expect(oov && oov->status == 200 && json::parse(oov->body)["degraded_guide"] == true, "caption oov guide");

  auto identity = post("/api/darken", json{{"image", b64}, {"factor", 1.0}}.dump());
  expect(identity && identity->status == 200 &&
             decode_png(base64_decode(json::parse(identity->body)["image"].get<std::string>())) == image,
         "darken identity");

  auto dark = post("/api/darken", json{{"image", b64}, {"factor", 0.2}}.dump());
  bool linear = dark && dark->status == 200;
  if (linear) {
    const RgbImage out = decode_png(base64_decode(json::parse(dark->body)["image"].get<std::string>()));
    linear = out.width == image.width && out.height == image.height;
    for (std::size_t i = 0; linear && i < out.pixels.size(); ++i) {
      linear = std::abs(static_cast<double>(out.pixels[i]) - 0.2 * image.pixels[i]) <= 0.5 + 1e-9;
    }
  }
  expect(linear, "darken linearity");

  expect(error_shape(post("/api/caption", "{not json")), "400 bad json");
  expect(error_shape(post("/api/caption", "[1,2]")), "400 non-object");
  expect(error_shape(post("/api/caption", json{{"guide_word", "square"}}.dump())), "400 missing image");
  expect(error_shape(post("/api/caption", json{{"image", "@@@not-base64@@@"}}.dump())), "400 bad base64");
  expect(error_shape(post("/api/caption", json{{"image", base64_encode(std::vector<std::uint8_t>{1, 2, 3})}}.dump())),
         "400 undecodable png");
  expect(error_shape(post("/api/caption", json{{"image", b64}, {"guide_word", ""}}.dump())), "400 empty guide");
  expect(error_shape(post("/api/darken", json{{"image", b64}, {"factor", 0.0}}.dump())), "400 factor 0");
  expect(error_shape(post("/api/darken", json{{"image", b64}, {"factor", 1.5}}.dump())), "400 factor 1.5");
  expect(error_shape(post("/api/darken", json{{"image", b64}}.dump())), "400 missing factor");

  server.stop();
  serving.join();
  std::string detail = std::to_string(checks - failed.size()) + "/" + std::to_string(checks) +
                       " checks over health, vocab, caption, darken and malformed-input 400s";
  if (!failed.empty()) {
    detail += "; failed:";
    for (const auto& f : failed) detail += " [" + f + "]";
  }
  return {failed.empty(), detail};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  report("gradient integrity", gradient_integrity());
  report("overfit reconstruction", overfit());

  std::vector<ParityRun> runs;
  report("low-light parity", parity(runs));

  const CaptionModel& dark_model = runs.front().report.models[1];
  const auto scenes = make_corpus(kTestScenes, Darkness::dark(), kTestSeed);
  report("attention shift (dark model, seed 1)", attention_shift(dark_model, scenes));
  for (std::size_t k = 1; k < runs.size(); ++k) {
    const auto o = attention_shift(runs[k].report.models[1], scenes);
    std::printf("info  attention shift (dark model, seed %llu): %s\n", static_cast<unsigned long long>(runs[k].seed),
                o.detail.c_str());
  }

  double worst_grid_error = 0;
  std::size_t grids_checked = 0;
  report("sentence completion", sentence_completion(dark_model, scenes, worst_grid_error, grids_checked));
  report("simplex and determinism", determinism(dark_model, scenes, worst_grid_error, grids_checked));
  report("API contract", api_contract(dark_model, scenes.front()));

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED", failures);
  return failures == 0 ? 0 : 1;
}

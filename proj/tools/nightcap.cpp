#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "nightcap/checkpoint.hpp"
#include "nightcap/dataset.hpp"
#include "nightcap/error.hpp"
#include "nightcap/gradcheck.hpp"
#include "nightcap/image.hpp"
#include "nightcap/inference.hpp"
#include "nightcap/server.hpp"
#include "nightcap/trainer.hpp"

namespace fs = std::filesystem;
using namespace nightcap;

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("nightcap");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  if (const char* level = std::getenv("NIGHTCAP_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }
}

void add_training_flags(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch", cfg.batch_size, "Examples per optimizer step")->capture_default_str();
  cmd->add_option("--lr", cfg.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--clip", cfg.grad_clip_norm, "Global gradient-norm clip")->capture_default_str();
  cmd->add_option("--guided-fraction", cfg.guided_step_fraction, "Fraction of guided examples")
      ->capture_default_str();
  cmd->add_option("--heldout", cfg.heldout_fraction, "Held-out fraction")->capture_default_str();
}

Tensor load_image_for(const CaptionModel& model, const fs::path& path) {
  Tensor pixels = image_to_tensor(read_png(path));
  const std::size_t size = model.config.image_size;
  if (pixels.dim(1) != size || pixels.dim(2) != size) pixels = resize_bilinear(pixels, size, size);
  return pixels;
}

std::string overlay_name(const fs::path& trace_path, std::size_t k, const std::string& token) {
  std::string safe;
  for (char c : token) safe += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%02zu_", k);
  return trace_path.stem().string() + buf + safe + ".png";
}

void print_gradcheck(const GradcheckReport& report, double tolerance) {
  for (const auto& c : report.cases) {
    std::printf("%-5s %-22s trials %4zu  coords %7zu  kinks %3zu  max rel err %.3e", c.passed ? "ok" : "FAIL",
                c.name.c_str(), c.trials, c.result.checked, c.result.kinks, c.result.max_error);
    if (!c.result.worst.empty()) {
      std::printf("  at %s (analytic %.9g, numeric %.9g)", c.result.worst.c_str(), c.result.worst_analytic,
                  c.result.worst_numeric);
    }
    std::printf("\n");
  }
  std::printf("%s: %zu cases, %zu trials, max rel err %.3e (tolerance %.0e), %.1f s\n",
              report.passed() ? "PASS" : "FAIL", report.cases.size(), report.trials(), report.max_error(),
              tolerance, report.seconds);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"nightcap: low-light image captioning with guide-word attention"};
  app.require_subcommand(1);

  // synth
  std::size_t synth_n = 200;
  std::string synth_darkness = "dark";
  double synth_factor = kDefaultDarkFactor;
  std::uint64_t synth_seed = 1;
  fs::path synth_out;
  auto* synth = app.add_subcommand("synth", "Render a synthetic captioned corpus");
  synth->add_option("--n", synth_n, "Number of scenes")->capture_default_str();
  synth->add_option("--darkness", synth_darkness, "bright, dark or mixed")->capture_default_str();
  synth->add_option("--factor", synth_factor, "Brightness factor in (0, 1]")->capture_default_str();
  synth->add_option("--seed", synth_seed, "First scene seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // train
  TrainConfig train_cfg;
  fs::path train_manifest, train_out;
  std::string train_mode = "bahdanau";
  auto* train_cmd = app.add_subcommand("train", "Train a captioner on a manifest");
  train_cmd->add_option("--manifest", train_manifest, "manifest.jsonl of {image, captions}")->required();
  train_cmd->add_option("--mode", train_mode, "Attention: bahdanau or dot")->capture_default_str();
  train_cmd->add_option("--seed", train_cfg.seed, "Initialization and shuffling seed")->capture_default_str();
  train_cmd->add_option("--out", train_out, "Output directory for model.ckpt and curve.csv")->required();
  add_training_flags(train_cmd, train_cfg);

  // compare
  TrainConfig compare_cfg;
  std::size_t compare_n = 200;
  double compare_factor = kDefaultDarkFactor;
  fs::path compare_out;
  std::string compare_mode = "bahdanau";
  auto* compare = app.add_subcommand("compare", "Train bright, dark and mixed models and report loss gaps");
  compare->add_option("--n", compare_n, "Scenes per corpus")->capture_default_str();
  compare->add_option("--seed", compare_cfg.seed, "Scene and training seed")->capture_default_str();
  compare->add_option("--factor", compare_factor, "Darkening factor")->capture_default_str();
  compare->add_option("--mode", compare_mode, "Attention: bahdanau or dot")->capture_default_str();
  compare->add_option("--out", compare_out, "Output directory")->required();
  add_training_flags(compare, compare_cfg);

  // caption
  fs::path cap_checkpoint, cap_image, cap_trace;
  std::string cap_guide;
  auto* caption = app.add_subcommand("caption", "Caption one PNG image");
  caption->add_option("--checkpoint", cap_checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  caption->add_option("--image", cap_image, "PNG image")->required()->check(CLI::ExistingFile);
  caption->add_option("--guide", cap_guide, "Guide word for interactive captioning");
  caption->add_option("--trace-out", cap_trace, "Attention trace JSON; overlays are written beside it");

  // gradcheck
  GradcheckOptions gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gradcheck->add_option("--seed", gc.seed, "Seed for randomized cases")->capture_default_str();
  gradcheck->add_option("--trials", gc.trials, "Randomized trials per op")->capture_default_str();

  // serve
  fs::path serve_checkpoint;
  std::string serve_bind = "127.0.0.1:8080";
  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  serve->add_option("--checkpoint", serve_checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  serve->add_option("--bind", serve_bind, "host:port")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) {
      const auto corpus = make_corpus(synth_n, Darkness::parse(synth_darkness, synth_factor), synth_seed);
      export_corpus(corpus, synth_out);
      spdlog::info("wrote {} scenes to {}", corpus.size(), synth_out.string());
    } else if (*train_cmd) {
      train_cfg.model.attention_mode = parse_attention_mode(train_mode);
      const auto corpus = load_coco_style(train_manifest, train_cfg.model.image_size);
      auto result = train(train_cfg, corpus, [](std::size_t epoch, double tr, double ho) {
        spdlog::info("epoch {:3d}  train {:.4f}  heldout {:.4f}", epoch, tr, ho);
      });
      fs::create_directories(train_out);
      save_checkpoint(result.model, train_out / "model.ckpt");
      write_curve_csv(train_out / "curve.csv", result.curve);
      std::cout << (train_out / "model.ckpt").string() << '\n';
    } else if (*compare) {
      compare_cfg.model.attention_mode = parse_attention_mode(compare_mode);
      const auto bright = make_corpus(compare_n, Darkness::bright(), compare_cfg.seed);
      const auto dark = make_corpus(compare_n, Darkness::dark(compare_factor), compare_cfg.seed);
      const auto mixed = make_corpus(compare_n, Darkness::mixed(compare_factor), compare_cfg.seed);
      const auto report = compare_environments(compare_cfg, bright, dark, mixed);
      fs::create_directories(compare_out);
      for (std::size_t k = 0; k < report.runs.size(); ++k) {
        write_curve_csv(compare_out / ("curve_" + report.runs[k].label + ".csv"), report.runs[k].curve);
        save_checkpoint(report.models[k], compare_out / ("model_" + report.runs[k].label + ".ckpt"));
      }
      const auto json = to_json(report);
      std::ofstream(compare_out / "report.json") << json.dump(2) << '\n';
      for (const auto& gap : report.gaps) {
        std::printf("%-6s vs %-6s  heldout gap %.4f  train gap %.4f\n", gap.environment.c_str(),
                    gap.reference.c_str(), gap.heldout, gap.train);
      }
    } else if (*caption) {
      const CaptionModel model = load_checkpoint(cap_checkpoint);
      const Tensor pixels = load_image_for(model, cap_image);
      const CaptionResult result =
          cap_guide.empty() ? caption_auto(model, pixels) : caption_interactive(model, pixels, cap_guide);
      if (result.degraded_guide) spdlog::warn("guide word '{}' is not in the vocabulary", cap_guide);
      std::cout << result.caption << '\n';
      if (!cap_trace.empty()) {
        if (cap_trace.has_parent_path()) fs::create_directories(cap_trace.parent_path());
        std::ofstream(cap_trace) << trace_to_json(result.trace).dump() << '\n';
        const auto overlays = render_trace(result.trace, pixels);
        for (std::size_t k = 0; k < overlays.size(); ++k) {
          write_png(cap_trace.parent_path() / overlay_name(cap_trace, k, result.trace.tokens[k]),
                    tensor_to_image(overlays[k]));
        }
      }
    } else if (*gradcheck) {
      const auto report = run_gradcheck(gc);
      print_gradcheck(report, gc.settings.tolerance);
      return report.passed() ? 0 : 1;
    } else if (*serve) {
      const auto colon = serve_bind.rfind(':');
      if (colon == std::string::npos) throw ParameterError("--bind must be host:port, got " + serve_bind);
      const std::string host = serve_bind.substr(0, colon);
      const int port = std::stoi(serve_bind.substr(colon + 1));
      HttpServer server(load_checkpoint(serve_checkpoint));
      const int bound = server.bind(host, port);
      std::cout << "listening on " << host << ':' << bound << std::endl;
      server.serve();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

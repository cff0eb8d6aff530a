#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() /
             ("nightcap_" + std::string(info->test_suite_name()) + "_" + info->name());
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

#include "nightcap/dataset.hpp"
#include "nightcap/trainer.hpp"

// A small dark corpus and a model trained to reproduce its captions exactly.
struct OverfitFixture {
  std::vector<nightcap::CaptionedImage> corpus;
  nightcap::TrainResult result;
};

const OverfitFixture& overfit_fixture();

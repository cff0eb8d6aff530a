#pragma once

// Central finite-difference checks of every differentiable op and of the full
// sequence loss. Used by the `gradcheck` CLI subcommand and by the tests.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nightcap/random.hpp"
#include "nightcap/tensor.hpp"

namespace nightcap {

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradientComparison {
  std::size_t checked = 0;
  double max_error = 0.0;
  std::string worst;  // "<tensor>[<index>]" of the largest error
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  /// Coordinates where a relu or max-pool switch lies within one step: the
  /// one-sided slopes disagree and the analytic value matches one of them.
  /// They are excluded from max_error.
  std::size_t kinks = 0;
};

struct GradcheckSettings {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Central differences of an O(1) loss carry ~1e-10 absolute rounding
  // noise at this step; gradients smaller than the floor compare absolutely.
  double floor = 1e-6;
  /// Largest share of kink coordinates a case may report and still pass.
  double max_kink_fraction = 0.01;
};

using LossFn = std::function<Tensor(Tape&)>;

/// Compares the taped gradient of `loss` w.r.t. each named input against
/// central differences. Checks every coordinate when `samples_per_tensor` is
/// 0, otherwise that many coordinates per tensor drawn from `rng`.
GradientComparison compare_gradients(const LossFn& loss, std::span<const std::pair<std::string, Tensor>> inputs,
                                     const GradcheckSettings& settings = {},
                                     std::size_t samples_per_tensor = 0, Rng* rng = nullptr);

struct GradcheckCase {
  std::string name;
  std::size_t trials = 0;
  GradientComparison result;
  bool passed = false;
};

bool case_passed(const GradientComparison& result, const GradcheckSettings& settings);

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double seconds = 0.0;

  bool passed() const;
  std::size_t trials() const;
  double max_error() const;
};

struct GradcheckOptions {
  std::uint64_t seed = 1;
  /// Randomized trials per op.
  std::size_t trials = 100;
  /// Coordinates sampled per tensor for the full-size model.
  std::size_t full_model_samples = 6;
  GradcheckSettings settings;
};

GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace nightcap

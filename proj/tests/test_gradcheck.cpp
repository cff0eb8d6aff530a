#include <gtest/gtest.h>

#include "nightcap/gradcheck.hpp"

using namespace nightcap;

TEST(RelativeError, UsesTheFloorForTinyValues) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, -1e-9, 1e-6), 2e-3);
}

TEST(CompareGradients, CatchesAWrongGradient) {
  // relu(x) at x = 0 has one-sided slopes 0 and 1; a deliberately wrong
  // loss (x * 3 taped as x * 2) must fail.
  auto x = Tensor::vector({0.5, -1.25}, true);
  std::vector<std::pair<std::string, Tensor>> inputs{{"x", x}};
  const auto ok = compare_gradients([&](Tape& t) { return ops::sum(t, ops::mul(t, x, x)); }, inputs);
  EXPECT_LE(ok.max_error, 1e-8);
  EXPECT_EQ(ok.checked, 2u);
  // Forward value of 3x with a tape that only knows about 2x.
  const auto bad = compare_gradients(
      [&](Tape& t) {
        Tensor twice = ops::affine(t, x, 2.0);
        Tensor frozen = Tensor::from({2}, {x[0], x[1]});
        return ops::sum(t, ops::add(t, twice, frozen));
      },
      inputs);
  EXPECT_GT(bad.max_error, 0.3);
  EXPECT_FALSE(case_passed(bad, GradcheckSettings{}));
}

TEST(CompareGradients, ExcludesReluKinks) {
  auto x = Tensor::vector({0.0, 1.0}, true);
  std::vector<std::pair<std::string, Tensor>> inputs{{"x", x}};
  const auto r = compare_gradients([&](Tape& t) { return ops::sum(t, ops::relu(t, x)); }, inputs);
  EXPECT_EQ(r.kinks, 1u);
  EXPECT_LE(r.max_error, 1e-8);
}

TEST(Gradcheck, FullSuitePasses) {
  const auto report = run_gradcheck();
  for (const auto& c : report.cases) {
    EXPECT_TRUE(c.passed) << c.name << " error " << c.result.max_error << " at " << c.result.worst;
  }
  EXPECT_TRUE(report.passed());
  EXPECT_GE(report.trials(), 100u);
  EXPECT_LE(report.max_error(), 1e-4);
}

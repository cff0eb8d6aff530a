#include <gtest/gtest.h>

#include <cmath>

#include "nightcap/error.hpp"
#include "nightcap/optim.hpp"
#include "nightcap/random.hpp"

using namespace nightcap;

namespace {

double norm(const Tensor& t) {
  double s = 0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST(Adam, MinimizesASquaredNorm) {
  auto w = Tensor::vector({1.0, 1.0}, true);
  Adam adam({w}, {1e-2});
  std::size_t steps = 0;
  while (norm(w) >= 1e-3 && steps < 2000) {
    Tape tape;
    tape.backward(ops::sum(tape, ops::mul(tape, w, w)));
    adam.step();
    w.zero_grad();
    ++steps;
  }
  EXPECT_LT(norm(w), 1e-3) << "after " << steps << " steps";
  EXPECT_EQ(adam.steps(), steps);
}

TEST(Adam, FirstStepMovesEachCoordinateByTheLearningRate) {
  auto w = Tensor::vector({3.0, -2.0}, true);
  w.mutable_grad()[0] = 0.5;
  w.mutable_grad()[1] = -7.0;
  Adam adam({w}, {0.1});
  adam.step();
  EXPECT_NEAR(w[0], 2.9, 1e-7);
  EXPECT_NEAR(w[1], -1.9, 1e-7);
}

TEST(Adam, ZeroLearningRateLeavesParameters) {
  auto w = Tensor::vector({0.25, -4.0}, true);
  w.mutable_grad()[0] = 1.0;
  Adam adam({w}, {0.0});
  adam.step();
  EXPECT_EQ(w[0], 0.25);
  EXPECT_EQ(w[1], -4.0);
  EXPECT_THROW(Adam({w}, {-1.0}), ParameterError);
}

TEST(ClipGradNorm, RescalesOnlyWhenAboveTheLimit) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::vector<Tensor> params{Tensor::zeros({3}, true), Tensor::zeros({2, 2}, true), Tensor::zeros({1}, true)};
    const double scale = rng.uniform(0.01, 100);
    for (auto& p : params) {
      for (auto& g : p.mutable_grad()) g = scale * rng.uniform(-1, 1);
    }
    const double before = global_grad_norm(params);
    const double limit = rng.uniform(0.1, 10);
    EXPECT_EQ(clip_grad_norm(params, limit), before);
    const double after = global_grad_norm(params);
    EXPECT_LE(after, limit + 1e-9);
    if (before <= limit) EXPECT_EQ(after, before);
    else EXPECT_NEAR(after, limit, 1e-9);
  }
  std::vector<Tensor> none{Tensor::zeros({2}, true)};
  EXPECT_EQ(clip_grad_norm(none, 1.0), 0.0);
  EXPECT_THROW(clip_grad_norm(none, 0.0), ParameterError);
}

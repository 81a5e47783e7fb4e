#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "distlab/optim.hpp"
#include "test_support.hpp"

using namespace distlab;

namespace {

TrainConfig schedule_config(Schedule s) {
  TrainConfig c;
  c.max_learning_rate = 1e-3;
  c.warmup_steps = 100;
  c.schedule = s;
  return c;
}

}  // namespace

TEST(Schedule, Endpoints) {
  for (auto s : {Schedule::kCosine, Schedule::kLinear, Schedule::kConstant}) {
    const auto c = schedule_config(s);
    EXPECT_EQ(lr_at_step(c, 0, 1000), 0.0);
    EXPECT_NEAR(lr_at_step(c, 100, 1000), 1e-3, 1e-15);
  }
  EXPECT_NEAR(lr_at_step(schedule_config(Schedule::kCosine), 1000, 1000), 0.0, 1e-18);
  EXPECT_NEAR(lr_at_step(schedule_config(Schedule::kLinear), 1000, 1000), 0.0, 1e-18);
  EXPECT_NEAR(lr_at_step(schedule_config(Schedule::kConstant), 1000, 1000), 1e-3, 1e-18);
}

TEST(Schedule, CosineMidpointIsHalfPeak) {
  const auto c = schedule_config(Schedule::kCosine);
  EXPECT_NEAR(lr_at_step(c, 550, 1000), 0.5e-3, 1e-9);
}

TEST(Schedule, ClosedFormsAtArbitrarySteps) {
  const auto cos_c = schedule_config(Schedule::kCosine);
  const auto lin_c = schedule_config(Schedule::kLinear);
  for (std::int64_t step : {1, 37, 99, 101, 333, 777, 999}) {
    double expect_cos, expect_lin;
    if (step < 100) {
      expect_cos = expect_lin = 1e-3 * step / 100.0;
    } else {
      const double prog = (step - 100) / 900.0;
      expect_cos = 1e-3 * 0.5 * (1 + std::cos(std::numbers::pi * prog));
      expect_lin = 1e-3 * (1 - prog);
    }
    EXPECT_NEAR(lr_at_step(cos_c, step, 1000), expect_cos, 1e-15);
    EXPECT_NEAR(lr_at_step(lin_c, step, 1000), expect_lin, 1e-15);
  }
}

TEST(Schedule, PublishedWarmupOf600) {
  TrainConfig c;
  EXPECT_EQ(c.warmup_steps, 600);
  EXPECT_NEAR(lr_at_step(c, 300, 10000), 3.5e-4, 1e-15);
  EXPECT_NEAR(lr_at_step(c, 600, 10000), 7e-4, 1e-15);
}

TEST(Schedule, OutOfRange) {
  const auto c = schedule_config(Schedule::kCosine);
  EXPECT_THROW(lr_at_step(c, -1, 10), ConfigError);
  EXPECT_THROW(lr_at_step(c, 11, 10), ConfigError);
}

TEST(AdamW, ZeroGradientNoDecayLeavesParams) {
  TrainConfig c;
  c.weight_decay = 0.0;
  Matrix<double> p = Matrix<double>::Constant(2, 2, 0.7), g = Matrix<double>::Zero(2, 2);
  Matrix<double> m = Matrix<double>::Zero(2, 2), v = Matrix<double>::Zero(2, 2);
  adamw_update(p, g, m, v, 1, 0.1, c, true);
  EXPECT_TRUE(p == Matrix<double>::Constant(2, 2, 0.7));
}

TEST(AdamW, SingleStepScalarOracle) {
  TrainConfig c;
  c.adam_beta1 = 0.9;
  c.adam_beta2 = 0.999;
  c.adam_epsilon = 1e-8;
  c.weight_decay = 0.0;
  Matrix<double> p = Matrix<double>::Constant(1, 1, 1.0), g = Matrix<double>::Constant(1, 1, 1.0);
  Matrix<double> m = Matrix<double>::Zero(1, 1), v = Matrix<double>::Zero(1, 1);
  adamw_update(p, g, m, v, 1, 0.1, c, true);
  // m_hat = 1, v_hat = 1 after bias correction.
  const double expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
  EXPECT_NEAR(p(0, 0), expected, 1e-10);
  EXPECT_NEAR(1.0 - p(0, 0), 0.1, 1e-8);
}

TEST(AdamW, DecoupledDecayWithPublishedRecipe) {
  TrainConfig c;  // weight decay 5, learning rate 7e-4
  Matrix<double> p = Matrix<double>::Constant(1, 3, 2.0), g = Matrix<double>::Zero(1, 3);
  Matrix<double> m = Matrix<double>::Zero(1, 3), v = Matrix<double>::Zero(1, 3);
  adamw_update(p, g, m, v, 1, c.max_learning_rate, c, true);
  EXPECT_NEAR(p(0, 0), 2.0 * (1 - 3.5e-3), 1e-15);
}

TEST(AdamW, NoDecayWeightsReproduceAdam) {
  // wd = 0 AdamW equals textbook Adam over several steps.
  TrainConfig c;
  c.weight_decay = 0.0;
  Rng rng(1);
  Matrix<double> p = Matrix<double>::Constant(1, 4, 0.3), m = Matrix<double>::Zero(1, 4), v = m;
  std::vector<double> ref(4, 0.3), rm(4, 0.0), rv(4, 0.0);
  for (int step = 1; step <= 10; ++step) {
    Matrix<double> g(1, 4);
    for (int i = 0; i < 4; ++i) g(0, i) = rng.normal();
    adamw_update(p, g, m, v, step, 0.01, c, true);
    for (int i = 0; i < 4; ++i) {
      rm[i] = 0.9 * rm[i] + 0.1 * g(0, i);
      rv[i] = 0.999 * rv[i] + 0.001 * g(0, i) * g(0, i);
      const double mh = rm[i] / (1 - std::pow(0.9, step));
      const double vh = rv[i] / (1 - std::pow(0.999, step));
      ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(p(0, i), ref[i], 1e-14);
}

TEST(AdamW, NormGainsAreNotDecayed) {
  const auto cfg = distlab::testing::tiny_config();
  auto p = init_params<double>(cfg, 1);
  const auto before = p;
  const auto g = ModelParams<double>::zeros(cfg);
  auto st = AdamState<double>::zeros(cfg);
  TrainConfig c;
  adamw_step(p, g, st, 1e-3, c);
  EXPECT_TRUE(p.norm == before.norm);
  EXPECT_FALSE(p.layers[0].wq == before.layers[0].wq);
  EXPECT_EQ(st.step, 1);
}

TEST(AdamW, NonFiniteGradientRejected) {
  const auto cfg = distlab::testing::tiny_config();
  auto p = init_params<double>(cfg, 1);
  const auto before = p;
  auto g = ModelParams<double>::zeros(cfg);
  g.layers[1].w_up(0, 0) = INFINITY;
  auto st = AdamState<double>::zeros(cfg);
  EXPECT_THROW(adamw_step(p, g, st, 1e-3, TrainConfig{}), ModelError);
  EXPECT_TRUE(p.layers[0].wq == before.layers[0].wq);
}

TEST(ClipGradNorm, BelowThresholdUnchanged) {
  const auto cfg = distlab::testing::tiny_config();
  auto g = ModelParams<double>::zeros(cfg);
  g.norm(0, 0) = 0.3;
  g.layers[0].wq(1, 1) = 0.4;
  const auto before = g;
  EXPECT_NEAR(clip_grad_norm(g, 1.0), 0.5, 1e-15);
  EXPECT_TRUE(g.layers[0].wq == before.layers[0].wq);
}

TEST(ClipGradNorm, RescalesToMaxNorm) {
  const auto cfg = distlab::testing::tiny_config();
  auto g = ModelParams<double>::zeros(cfg);
  g.norm(0, 0) = 6.0;
  g.layers[1].w_down(2, 3) = 8.0;  // global norm 10
  EXPECT_NEAR(clip_grad_norm(g, 1.0), 10.0, 1e-12);
  EXPECT_NEAR(g.norm(0, 0), 0.6, 1e-6);
  EXPECT_NEAR(g.layers[1].w_down(2, 3), 0.8, 1e-6);
  EXPECT_NEAR(global_grad_norm(g), 1.0, 1e-6);
}

TEST(ClipGradNorm, AllZeroIsSafe) {
  const auto cfg = distlab::testing::tiny_config();
  auto g = ModelParams<double>::zeros(cfg);
  EXPECT_EQ(clip_grad_norm(g, 1.0), 0.0);
  for (const auto& t : named_tensors(g)) EXPECT_TRUE(t.tensor->isZero(0.0));
}

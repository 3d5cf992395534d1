#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "multimae/checkpoint.hpp"
#include "multimae/trainer.hpp"
#include "test_util.hpp"

using namespace multimae;
using namespace testutil;

namespace {

ModelConfig tiny_model() {
  ModelConfig c = ModelConfig::desk();
  c.resolution = 32;
  c.encoder = {16, 1, 2, 2};
  c.decoder = {16, 1, 2, 2};
  c.class_embed_dim = 4;
  c.num_classes = 16;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.batch_size = 4;
  t.epochs = 6;
  t.warmup_epochs = 1;
  t.num_visible = 5;
  t.seed = 3;
  t.base_lr = 0.05;
  return t;
}

std::vector<Sample> tiny_data(std::size_t n, const ModelConfig& c) {
  SyntheticParams p;
  p.resolution = c.resolution;
  p.num_classes = c.num_classes;
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_synthetic_scene(100 + i, p));
  return out;
}

std::vector<std::string> lines(const std::vector<LossReport>& log) {
  std::vector<std::string> out;
  for (const auto& r : log) out.push_back(r.to_line());
  return out;
}

}  // namespace

TEST(Schedule, StepsAndWarmupFraction) {
  TrainConfig t;
  t.batch_size = 8;
  t.epochs = 2000;
  t.warmup_epochs = 200;
  const auto s = make_schedule(t, 8);
  EXPECT_EQ(s.steps_per_epoch, 1u);
  EXPECT_EQ(s.total_steps, 2000u);
  EXPECT_EQ(s.warmup_steps, 200u);
  const auto s2 = make_schedule(t, 20);
  EXPECT_EQ(s2.steps_per_epoch, 2u);
  EXPECT_EQ(static_cast<double>(s2.warmup_steps) / s2.total_steps, 0.1);
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig t;
  t.warmup_epochs = t.epochs;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig{};
  t.base_lr = 0.0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig{};
  t.accumulation = t.batch_size + 1;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(TrainLoop, SameSeedSameLossStream) {
  const auto c = tiny_model();
  const auto data = tiny_data(8, c);
  auto run = [&] {
    auto model = MultiMae<float>::initialize(c, 1);
    AdamWState<float> adam;
    return lines(train_loop(model, adam, data, tiny_train()));
  };
  const auto a = run();
  EXPECT_EQ(a.size(), 12u);
  EXPECT_EQ(a, run());
}

TEST(TrainLoop, LrTraceMatchesSchedule) {
  const auto c = tiny_model();
  const auto data = tiny_data(8, c);
  auto model = MultiMae<float>::initialize(c, 1);
  AdamWState<float> adam;
  const auto cfg = tiny_train();
  const auto log = train_loop(model, adam, data, cfg);
  const auto s = make_schedule(cfg, data.size());
  for (const auto& r : log) EXPECT_EQ(r.lr, lr_at(r.step, s.total_steps, s.warmup_steps, s.peak_lr, s.warmup_lr));
}

TEST(TrainLoop, ParameterNamesStable) {
  const auto c = tiny_model();
  auto model = MultiMae<float>::initialize(c, 1);
  std::set<std::string> before;
  for (const auto& [n, t] : model.params()) before.insert(n);
  AdamWState<float> adam;
  train_loop(model, adam, tiny_data(4, c), tiny_train(), {}, 3);
  std::set<std::string> after;
  for (const auto& [n, t] : model.params()) after.insert(n);
  EXPECT_EQ(before, after);
  EXPECT_EQ(adam.step, 3u);
}

TEST(TrainLoop, ResumeIsBitExact) {
  const auto c = tiny_model();
  const auto data = tiny_data(8, c);
  const auto cfg = tiny_train();
  auto full_model = MultiMae<float>::initialize(c, 1);
  AdamWState<float> full_adam;
  const auto full = lines(train_loop(full_model, full_adam, data, cfg));

  auto part_model = MultiMae<float>::initialize(c, 1);
  AdamWState<float> part_adam;
  auto head = lines(train_loop(part_model, part_adam, data, cfg, {}, 5));
  Checkpoint ck;
  ck.step = part_adam.step;
  ck.seed = cfg.seed;
  store_params(ck, part_model.params());
  store_adam(ck, part_model.params(), part_adam);
  const auto loaded = decode_checkpoint(encode_checkpoint(ck));
  MultiMae<float> resumed(c, restore_params<float>(loaded));
  auto adam = restore_adam<float>(loaded);
  const auto tail = lines(train_loop(resumed, adam, data, cfg));
  head.insert(head.end(), tail.begin(), tail.end());
  EXPECT_EQ(head, full);
  for (const auto& [n, t] : full_model.params()) EXPECT_EQ(values(t), values(resumed.params().at(n))) << n;
}

TEST(TrainStep, AccumulationMatchesLargeBatch) {
  const auto c = tiny_model();
  const auto data = tiny_data(4, c);
  const auto cfg = tiny_train();
  std::vector<MaskPlan> plans;
  for (std::size_t i = 0; i < 4; ++i) plans.push_back(build_mask_plan(mask_params(cfg, c), c.inputs, c.caps(), 50 + i));
  auto one = MultiMae<float>::initialize(c, 2);
  auto two = MultiMae<float>::initialize(c, 2);
  AdamWState<float> a1, a2;
  const auto r1 = train_step(one, a1, data, plans, 1e-3, cfg.adamw(), 1, 0);
  const auto r2 = train_step(two, a2, data, plans, 1e-3, cfg.adamw(), 2, 0);
  EXPECT_NEAR(r1.total, r2.total, 1e-6);
  for (const auto& [n, t] : one.params()) {
    const auto& u = two.params().at(n);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      ASSERT_NEAR(t.grad()[i], u.grad()[i], 1e-6) << n;
      ASSERT_NEAR(t.data()[i], u.data()[i], 1e-6) << n;
    }
  }
}

TEST(TrainStep, NonFiniteLossAbortsWithDiagnostic) {
  const auto c = tiny_model();
  auto data = tiny_data(2, c);
  const auto cfg = tiny_train();
  auto model = MultiMae<float>::initialize(c, 2);
  auto& w = model.params().at("decoder.rgb.head.bias");
  w.mutable_data()[0] = std::numeric_limits<float>::infinity();
  std::vector<MaskPlan> plans;
  for (std::size_t i = 0; i < 2; ++i) plans.push_back(build_mask_plan(mask_params(cfg, c), c.inputs, c.caps(), i));
  AdamWState<float> adam;
  try {
    train_step(model, adam, data, plans, 1e-3, cfg.adamw(), 1, 7);
    FAIL() << "no abort";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 7"), std::string::npos) << msg;
    EXPECT_NE(msg.find("rgb="), std::string::npos) << msg;
  }
}

TEST(TrainLoop, LossDecreasesOnTinyOverfit) {
  const auto c = tiny_model();
  const auto data = tiny_data(2, c);
  TrainConfig cfg = tiny_train();
  cfg.batch_size = 2;
  cfg.epochs = 300;
  cfg.warmup_epochs = 10;
  cfg.augment = false;
  cfg.base_lr = 0.128;
  auto model = MultiMae<float>::initialize(c, 4);
  AdamWState<float> adam;
  const auto log = train_loop(model, adam, data, cfg);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += log[i].total;
    last += log[log.size() - 1 - i].total;
  }
  EXPECT_LT(last, 0.5 * first);
}

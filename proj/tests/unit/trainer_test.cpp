/*
 * Copyright 2026 The ltlab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "ltlab/error.hpp"
#include "ltlab/pruning.hpp"
#include "ltlab/trainer.hpp"

namespace ltlab {
namespace {

std::pair<Dataset, Dataset> digits_split()
{
    auto [train, test] = load_digits(LTLAB_SOURCE_DIR "/data/digits.ltkt");
    auto [tr, val] = split_dataset(train, 0.9, 7);
    return {tr, test};
}

TEST(LrSchedule, StepRule)
{
    const LrSchedule s180 = step_schedule(180);
    EXPECT_NEAR(lr_at(0.1, s180, 0), 0.1, 1e-15);
    EXPECT_NEAR(lr_at(0.1, s180, 89), 0.1, 1e-15);
    EXPECT_NEAR(lr_at(0.1, s180, 90), 0.01, 1e-15);
    EXPECT_NEAR(lr_at(0.1, s180, 134), 0.01, 1e-15);
    EXPECT_NEAR(lr_at(0.1, s180, 135), 0.001, 1e-15);
    EXPECT_NEAR(lr_at(0.1, s180, 179), 0.001, 1e-15);

    const LrSchedule s20 = step_schedule(20);
    ASSERT_EQ(s20.size(), 2u);
    EXPECT_EQ(s20[0].first, 10);
    EXPECT_EQ(s20[1].first, 15);
    EXPECT_DOUBLE_EQ(lr_at(0.5, {}, 1000), 0.5);
    EXPECT_THROW(lr_at(0.1, s20, -1), ValidationError);
}

TEST(Sgd, HandComputedUpdates)
{
    std::vector<float> w{1.0f}, g{1.0f}, v{0.0f};
    sgd_update(w, g, v, {}, {0.9, 0.0}, 0.1);
    EXPECT_FLOAT_EQ(v[0], 1.0f);
    EXPECT_FLOAT_EQ(w[0], 0.9f);
    sgd_update(w, g, v, {}, {0.9, 0.0}, 0.1);
    EXPECT_FLOAT_EQ(v[0], 1.9f);
    EXPECT_FLOAT_EQ(w[0], 0.71f);

    std::vector<float> w2{1.0f}, v2{0.0f};
    sgd_update(w2, g, v2, {}, {0.9, 2e-4}, 0.1);
    EXPECT_NEAR(v2[0], 1.0002, 1e-7);
    EXPECT_NEAR(w2[0], 0.89998, 1e-7);
}

TEST(Sgd, MaskedCoordinatesStayZero)
{
    std::vector<float> w{0.0f, 2.0f}, g{5.0f, 1.0f}, v{0.0f, 0.0f}, keep{0.0f, 1.0f};
    for (int i = 0; i < 5; ++i)
        sgd_update(w, g, v, keep, {0.9, 1e-3}, 0.1);
    EXPECT_EQ(w[0], 0.0f);
    EXPECT_EQ(v[0], 0.0f);
    EXPECT_NE(w[1], 2.0f);
    std::vector<float> short_v{0.0f};
    EXPECT_THROW(sgd_update(w, g, short_v, keep, {}, 0.1), ValidationError);
}

TEST(Sgd, NonFiniteGradientAbortsWithoutMutation)
{
    Model m = Model::build(tiny_mlp({4}, 3, 2), 1);
    const TensorMap before = m.parameters();
    for (const std::string& name : m.parameter_names())
        m.param(name).grad();
    const std::string victim = m.prunable_names().back();
    m.param(victim).grad()[0] = std::numeric_limits<float>::quiet_NaN();
    OptState st;
    try {
        sgd_step(m, nullptr, st, 0.1);
        FAIL() << "expected RuntimeFailure";
    } catch (const RuntimeFailure& e) {
        EXPECT_NE(std::string(e.what()).find(victim), std::string::npos);
    }
    EXPECT_EQ(m.parameters(), before);
}

TEST(Train, ZeroEpochsLeavesWeightsAndRecordsStart)
{
    auto [train_set, test] = digits_split();
    Model m = Model::build(mlp_300_100({1, 8, 8}, 10), 3);
    const TensorMap before = m.parameters();
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.checkpoint_epochs = {0};
    const TrainResult r = train(m, nullptr, {}, train_set, test, cfg);
    EXPECT_TRUE(r.metrics.empty());
    EXPECT_EQ(r.steps, 0u);
    EXPECT_EQ(m.parameters(), before);
    EXPECT_EQ(r.checkpoints.at(0), before);
    cfg.epochs = -1;
    EXPECT_THROW(train(m, nullptr, {}, train_set, test, cfg), ValidationError);
}

TEST(Train, MlpLearnsDigitsDeterministically)
{
    auto [train_set, test] = digits_split();
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 64;
    cfg.seed = 11;
    Model a = Model::build(mlp_300_100({1, 8, 8}, 10), 5);
    Model b = Model::build(mlp_300_100({1, 8, 8}, 10), 5);
    const TrainResult ra = train(a, nullptr, {}, train_set, test, cfg);
    const TrainResult rb = train(b, nullptr, {}, train_set, test, cfg);
    EXPECT_EQ(ra.metrics, rb.metrics);
    EXPECT_EQ(a.parameters(), b.parameters());
    EXPECT_GT(evaluate(a, test).accuracy, 0.9);
    ASSERT_EQ(ra.metrics.size(), 12u);
    EXPECT_EQ(ra.metrics.front().split, "train");
    EXPECT_EQ(ra.metrics.back().epoch, 6);
    EXPECT_NEAR(ra.metrics.back().lr, 0.001, 1e-12);
    EXPECT_GE(ra.best_epoch, 1);
}

TEST(Train, MaskedMassZeroAfterEveryStep)
{
    auto [train_set, test] = digits_split();
    Model m = Model::build(mlp_300_100({1, 8, 8}, 10), 9);
    const Mask mask = global_magnitude_prune(m, Mask::dense(m), 0.7);
    apply_mask(m, mask);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 100;
    std::size_t calls = 0;
    double worst = 0.0;
    train(m, &mask, {}, train_set, test, cfg, [&](const Model& mm, int, std::size_t) {
        worst = std::max(worst, masked_weight_mass(mm, mask));
        ++calls;
    });
    EXPECT_GT(calls, 0u);
    EXPECT_EQ(worst, 0.0);
}

TEST(Train, DistillationNeedsTeacher)
{
    auto [train_set, test] = digits_split();
    Model m = Model::build(tiny_mlp({1, 8, 8}, 8, 10), 2);
    Recipe r;
    r.loss.kind = LossKind::kDistill;
    TrainConfig cfg;
    cfg.epochs = 1;
    EXPECT_THROW(train(m, nullptr, r, train_set, test, cfg), ValidationError);
    r.teacher_logits = predict_logits(m, train_set);
    EXPECT_NO_THROW(train(m, nullptr, r, train_set, test, cfg));
}

TEST(Metrics, CsvLayout)
{
    const std::string csv = metrics_csv({{1, "train", 0.5, 0.75, 0.1}});
    EXPECT_EQ(csv, "epoch,split,loss,accuracy,lr\n1,train,0.5,0.75,0.1\n");
}

} // namespace
} // namespace ltlab

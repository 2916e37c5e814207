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

#ifndef LTLAB_TRAINER_HPP
#define LTLAB_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ltlab/data.hpp"
#include "ltlab/init.hpp"
#include "ltlab/losses.hpp"
#include "ltlab/model.hpp"
#include "ltlab/pruning.hpp"

namespace ltlab {

/// (trigger epoch, multiplier) pairs; epochs are zero-based.
using LrSchedule = std::vector<std::pair<int, double>>;

/// x0.1 at round(0.5 * epochs) and round(0.75 * epochs).
LrSchedule step_schedule(int epochs);

/// lr0 times every multiplier whose trigger epoch is <= epoch.
double lr_at(double lr0, const LrSchedule& schedule, int epoch);

struct OptimizerConfig {
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 2e-4;
    std::optional<LrSchedule> schedule; // empty: step_schedule(epochs)
};

struct SgdHyper {
    double momentum = 0.9;
    double weight_decay = 0.0;
};

/// v <- momentum * v + (g + wd * w); w <- w - lr * v; then w and v are
/// zeroed wherever keep[i] == 0 (keep may be empty for an unmasked block).
void sgd_update(std::span<float> w, std::span<const float> g, std::span<float> v, std::span<const float> keep,
                const SgdHyper& hyper, double lr);

/// Momentum buffers per trainable block.
struct OptState {
    SgdHyper hyper;
    std::map<std::string, std::vector<float>> velocity;
};

/// Steps every trainable parameter with the gradient currently stored on
/// it. All gradients are checked first; a non-finite entry throws
/// RuntimeFailure naming the block and leaves the model untouched.
void sgd_step(Model& model, const Mask* mask, OptState& state, double lr);

struct EpochMetrics {
    int epoch = 0; // 1-based: metrics as of the end of this epoch
    std::string split; // "train" or "val"
    double loss = 0.0;
    double accuracy = 0.0;
    double lr = 0.0;

    friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

/// epoch,split,loss,accuracy,lr
std::string metrics_csv(const std::vector<EpochMetrics>& metrics);

struct TrainConfig {
    int epochs = 20;
    std::size_t batch_size = 128;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    std::vector<int> checkpoint_epochs; // 0 records the starting weights
    bool keep_best = true;
};

struct Recipe {
    LossSpec loss;
    /// Teacher logits for every training row, required when loss.kind is kd.
    std::optional<Tensor> teacher_logits;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    double best_val_accuracy = 0.0;
    int best_epoch = 0;
    CheckpointStore checkpoints;
    std::vector<std::string> warnings;
    std::size_t steps = 0;
};

/// Called after every optimizer step with (model, epoch, step index).
using StepObserver = std::function<void(const Model&, int, std::size_t)>;

/// Seeded mini-batch SGD on `train`, validating on `val` each epoch. A
/// trailing batch with fewer than two rows is dropped. When keep_best is
/// set the model ends with the weights and running statistics of the epoch
/// with the highest validation accuracy (ties go to the lower validation
/// loss).
TrainResult train(Model& model, const Mask* mask, const Recipe& recipe, const Dataset& train, const Dataset& val,
                  const TrainConfig& config, const StepObserver& observer = {});

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Hard-label cross-entropy and accuracy in inference mode.
Evaluation evaluate(Model& model, const Dataset& data, std::size_t batch_size = 256);

/// Inference-mode logits for every row, [N, K].
Tensor predict_logits(Model& model, const Dataset& data, std::size_t batch_size = 256);

/// Gathers rows of a [N, ...] tensor.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows);

/// First `count` rows of a seeded permutation, as a hard-label batch.
Batch sample_batch(const Dataset& data, std::size_t count, std::uint64_t seed, std::size_t offset = 0);

} // namespace ltlab

#endif // LTLAB_TRAINER_HPP

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

#ifndef LTLAB_LOSSES_HPP
#define LTLAB_LOSSES_HPP

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ltlab/tensor.hpp"

namespace ltlab {

struct SoftTarget {
    std::vector<double> probs;
    std::size_t classes = 0;
    double alpha = 0.0;
};

/// y * (1 - alpha) + alpha / K.
SoftTarget smooth_labels(std::span<const double> onehot, double alpha, std::size_t classes);

/// -sum_k target_k * log softmax(logits)_k with max subtraction.
double ce_loss(std::span<const double> logits, const SoftTarget& target);

/// KL(softmax(teacher / tau) || softmax(student / tau)), unscaled.
double kd_loss(std::span<const double> student_logits, std::span<const double> teacher_logits, double tau);

enum class LossKind { kHard, kLabelSmooth, kDistill };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view text);

struct LossSpec {
    LossKind kind = LossKind::kHard;
    double alpha = 0.1;
    double tau = 4.0;
    std::string teacher; // checkpoint path; empty = the run's trained dense model
};

void validate(const LossSpec& spec);

/// [N, K] training targets: one-hot for hard and distill, smoothed for
/// label smoothing.
Tensor make_targets(std::span<const int> labels, std::size_t classes, const LossSpec& spec);

Tensor one_hot(std::span<const int> labels, std::size_t classes);

} // namespace ltlab

#endif // LTLAB_LOSSES_HPP

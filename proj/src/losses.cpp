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

#include "ltlab/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ltlab/error.hpp"

namespace ltlab {

namespace {

std::vector<double> log_softmax(std::span<const double> z, double inv_temp)
{
    double mx = -INFINITY;
    for (double v : z)
        mx = std::max(mx, v * inv_temp);
    double s = 0.0;
    for (double v : z)
        s += std::exp(v * inv_temp - mx);
    const double lse = mx + std::log(s);
    std::vector<double> out(z.size());
    for (std::size_t k = 0; k < z.size(); ++k)
        out[k] = z[k] * inv_temp - lse;
    return out;
}

} // namespace

SoftTarget smooth_labels(std::span<const double> onehot, double alpha, std::size_t classes)
{
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ValidationError("label smoothing alpha must lie in [0,1], got " + std::to_string(alpha));
    if (classes < 2 || onehot.size() != classes)
        throw ValidationError("label smoothing needs K >= 2 and a length-K one-hot vector");
    const auto hot = std::count(onehot.begin(), onehot.end(), 1.0);
    const auto cold = std::count(onehot.begin(), onehot.end(), 0.0);
    if (hot != 1 || cold != std::ptrdiff_t(classes) - 1)
        throw ValidationError("label smoothing input must be one-hot");
    SoftTarget t;
    t.classes = classes;
    t.alpha = alpha;
    t.probs.resize(classes);
    const double floor = alpha / double(classes);
    for (std::size_t k = 0; k < classes; ++k)
        t.probs[k] = onehot[k] * (1.0 - alpha) + floor;
    return t;
}

double ce_loss(std::span<const double> logits, const SoftTarget& target)
{
    if (logits.size() != target.probs.size())
        throw ValidationError("logits and target differ in class count");
    const auto lp = log_softmax(logits, 1.0);
    double loss = 0.0;
    for (std::size_t k = 0; k < lp.size(); ++k)
        if (target.probs[k] != 0.0)
            loss -= target.probs[k] * lp[k];
    return loss;
}

double kd_loss(std::span<const double> student_logits, std::span<const double> teacher_logits, double tau)
{
    if (student_logits.size() != teacher_logits.size())
        throw ValidationError("student and teacher differ in class count");
    if (!(tau > 0.0))
        throw ValidationError("distillation temperature must be positive");
    const auto lp = log_softmax(student_logits, 1.0 / tau);
    const auto lq = log_softmax(teacher_logits, 1.0 / tau);
    double kl = 0.0;
    for (std::size_t k = 0; k < lp.size(); ++k) {
        const double q = std::exp(lq[k]);
        if (q > 0.0)
            kl += q * (lq[k] - lp[k]);
    }
    return std::max(kl, 0.0);
}

std::string_view to_string(LossKind kind)
{
    switch (kind) {
    case LossKind::kHard: return "hard";
    case LossKind::kLabelSmooth: return "ls";
    case LossKind::kDistill: return "kd";
    }
    return "hard";
}

LossKind parse_loss_kind(std::string_view text)
{
    if (text == "hard")
        return LossKind::kHard;
    if (text == "ls")
        return LossKind::kLabelSmooth;
    if (text == "kd")
        return LossKind::kDistill;
    throw ValidationError("unknown loss kind '" + std::string(text) + "' (expected hard|ls|kd)");
}

void validate(const LossSpec& spec)
{
    if (!(spec.alpha >= 0.0 && spec.alpha <= 1.0))
        throw ValidationError("recipe.alpha must lie in [0,1], got " + std::to_string(spec.alpha));
    if (!(spec.tau > 0.0))
        throw ValidationError("recipe.tau must be positive, got " + std::to_string(spec.tau));
}

Tensor one_hot(std::span<const int> labels, std::size_t classes)
{
    Tensor t({labels.size(), classes}, 0.0f);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || std::size_t(labels[i]) >= classes)
            throw ValidationError("label " + std::to_string(labels[i]) + " out of range");
        t[i * classes + std::size_t(labels[i])] = 1.0f;
    }
    return t;
}

Tensor make_targets(std::span<const int> labels, std::size_t classes, const LossSpec& spec)
{
    Tensor t = one_hot(labels, classes);
    if (spec.kind != LossKind::kLabelSmooth)
        return t;
    validate(spec);
    const float hot = float((1.0 - spec.alpha) + spec.alpha / double(classes));
    const float cold = float(spec.alpha / double(classes));
    for (float& v : t.data())
        v = v != 0.0f ? hot : cold;
    return t;
}

} // namespace ltlab

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

#include "ltlab/init.hpp"

#include <algorithm>
#include <cmath>

#include "ltlab/error.hpp"

namespace ltlab {

void validate(const RescaleOptions& o)
{
    if (!(o.lo > 0.0 && o.lo < 1.0 && o.hi > 1.0))
        throw ValidationError("rescale bounds must satisfy 0 < lo < 1 < hi");
    if (o.grid.empty())
        throw ValidationError("rescale grid is empty");
    for (double g : o.grid)
        if (!(g > 0.0) || !std::isfinite(g))
            throw ValidationError("rescale grid values must be positive and finite");
    if (o.passes < 1)
        throw ValidationError("rescale needs at least one pass");
    if (!(o.inner_lr > 0.0))
        throw ValidationError("rescale inner learning rate must be positive");
}

std::string_view to_string(InitKind kind)
{
    switch (kind) {
    case InitKind::kLottery: return "lottery";
    case InitKind::kRewind: return "rewind";
    case InitKind::kRescaled: return "rescaled";
    }
    return "lottery";
}

double one_step_objective(Model& model, const Mask& mask, const Batch& step, const Batch& probe, double inner_lr)
{
    const TensorMap saved = model.parameters();
    model.loss_and_grad(step.inputs, step.targets, LossHead::kCrossEntropy, true, false);
    for (const std::string& name : model.parameter_names()) {
        Tensor& w = model.param(name);
        const auto g = w.grad();
        const Tensor* m = mask.find(name);
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] -= float(inner_lr) * g[i];
            if (m && (*m)[i] == 0.0f)
                w[i] = 0.0f;
        }
    }
    const double value = model.loss(probe.inputs, probe.targets, LossHead::kCrossEntropy, true);
    model.load_parameters(saved);
    return std::isfinite(value) ? value : INFINITY;
}

namespace {

void scale_block(Model& model, const std::string& name, double factor)
{
    for (float& v : model.param(name).data())
        v = float(double(v) * factor);
}

} // namespace

RescaleResult rescale_init(Model& model, const Mask& mask, const Batch& step, const Batch& probe,
                           const RescaleOptions& options)
{
    validate(options);
    apply_mask(model, mask);
    RescaleResult r;
    const auto collapsed = detect_layer_collapse(mask);
    const TensorMap base = model.parameters();
    std::vector<std::string> blocks;
    for (const std::string& name : model.prunable_names()) {
        r.scales[name] = 1.0;
        if (std::find(collapsed.begin(), collapsed.end(), name) != collapsed.end())
            r.collapsed.push_back(name);
        else
            blocks.push_back(name);
    }

    auto evaluate = [&](const std::map<std::string, double>& scales) {
        model.load_parameters(base);
        for (const auto& [name, c] : scales)
            if (c != 1.0)
                scale_block(model, name, c);
        ++r.evaluations;
        return one_step_objective(model, mask, step, probe, options.inner_lr);
    };

    r.baseline = evaluate(r.scales);
    double best = r.baseline;
    for (int pass = 0; pass < options.passes; ++pass) {
        bool improved = false;
        for (const std::string& name : blocks) {
            const double current = r.scales[name];
            double best_scale = current;
            for (double g : options.grid) {
                const double candidate = current * g;
                if (g == 1.0 || candidate < options.lo || candidate > options.hi)
                    continue;
                auto trial = r.scales;
                trial[name] = candidate;
                const double value = evaluate(trial);
                if (value < best) {
                    best = value;
                    best_scale = candidate;
                }
            }
            if (best_scale != current) {
                r.scales[name] = best_scale;
                improved = true;
            }
        }
        if (!improved)
            break;
    }
    r.objective = best;
    model.load_parameters(base);
    for (const auto& [name, c] : r.scales)
        if (c != 1.0)
            scale_block(model, name, c);
    return r;
}

void CheckpointStore::record(int epoch, TensorMap params)
{
    if (epoch < 0)
        throw ValidationError("checkpoint epoch must be non-negative");
    states_[epoch] = std::move(params);
}

std::vector<int> CheckpointStore::epochs() const
{
    std::vector<int> out;
    for (const auto& [e, _] : states_)
        out.push_back(e);
    return out;
}

const TensorMap& CheckpointStore::at(int epoch) const
{
    auto it = states_.find(epoch);
    if (it == states_.end()) {
        std::string have;
        for (int e : epochs())
            have += (have.empty() ? "" : ", ") + std::to_string(e);
        throw ValidationError("no checkpoint recorded for epoch " + std::to_string(epoch) + " (available: "
                              + (have.empty() ? "none" : have) + ")");
    }
    return it->second;
}

TensorMap rewind(const CheckpointStore& store, int epoch)
{
    return store.at(epoch);
}

int rewind_epoch(int total_epochs, double fraction)
{
    if (total_epochs < 0)
        throw ValidationError("epoch count must be non-negative");
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw ValidationError("rewind fraction must lie in [0,1]");
    // The epsilon keeps exact products such as 0.18 * 100 at 18.
    return int(std::ceil(fraction * double(total_epochs) - 1e-9));
}

} // namespace ltlab

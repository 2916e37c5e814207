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

#include "ltlab/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "ltlab/error.hpp"

namespace ltlab {

Mask Mask::dense(const Model& model)
{
    Mask m;
    for (const std::string& name : model.prunable_names())
        m.blocks.emplace(name, Tensor(model.param(name).shape(), 1.0f));
    return m;
}

std::size_t Mask::total() const
{
    std::size_t n = 0;
    for (const auto& [_, t] : blocks)
        n += t.size();
    return n;
}

std::size_t Mask::ones() const
{
    std::size_t n = 0;
    for (const auto& [_, t] : blocks)
        for (float v : t.data())
            n += v != 0.0f;
    return n;
}

double Mask::sparsity() const
{
    const std::size_t t = total();
    return t == 0 ? 0.0 : 1.0 - double(ones()) / double(t);
}

const Tensor* Mask::find(const std::string& block) const
{
    auto it = blocks.find(block);
    return it == blocks.end() ? nullptr : &it->second;
}

namespace {

void check_mask(const Model& model, const Mask& mask)
{
    std::string problems;
    for (const std::string& name : model.prunable_names()) {
        const Tensor* t = mask.find(name);
        if (!t)
            problems += " missing '" + name + "'";
        else if (t->shape() != model.param(name).shape())
            problems += " '" + name + "' has shape " + shape_to_string(t->shape()) + " vs "
                        + shape_to_string(model.param(name).shape());
    }
    for (const auto& [name, _] : mask.blocks) {
        const auto& pn = model.prunable_names();
        if (std::find(pn.begin(), pn.end(), name) == pn.end())
            problems += " unknown block '" + name + "'";
    }
    if (!problems.empty())
        throw ValidationError("mask does not match model:" + problems);
}

struct Candidate {
    float magnitude;
    const std::string* block;
    std::size_t index;
};

Mask prune_count(const Model& model, const Mask& mask, std::size_t remove)
{
    std::vector<Candidate> alive;
    for (const auto& [name, m] : mask.blocks) {
        const Tensor& w = model.param(name);
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i] != 0.0f)
                alive.push_back({std::abs(w[i]), &name, i});
    }
    if (remove >= alive.size())
        throw ValidationError("pruning " + std::to_string(remove) + " of " + std::to_string(alive.size())
                              + " surviving weights would remove every weight");
    auto less = [](const Candidate& a, const Candidate& b) {
        return std::tie(a.magnitude, *a.block, a.index) < std::tie(b.magnitude, *b.block, b.index);
    };
    std::nth_element(alive.begin(), alive.begin() + std::ptrdiff_t(remove), alive.end(), less);
    Mask out = mask;
    for (std::size_t k = 0; k < remove; ++k)
        out.blocks.at(*alive[k].block)[alive[k].index] = 0.0f;
    return out;
}

} // namespace

Mask global_magnitude_prune(const Model& model, const Mask& mask, double fraction)
{
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ValidationError("prune fraction must lie in (0,1), got " + std::to_string(fraction));
    check_mask(model, mask);
    const std::size_t survivors = mask.ones();
    // The epsilon keeps products such as 0.58 * 100 from flooring to 57.
    const auto remove = std::size_t(std::floor(fraction * double(survivors) + 1e-9));
    return prune_count(model, mask, remove);
}

Mask prune_to_sparsity(const Model& model, const Mask& mask, double target_sparsity)
{
    if (!(target_sparsity >= 0.0 && target_sparsity < 1.0))
        throw ValidationError("target sparsity must lie in [0,1), got " + std::to_string(target_sparsity));
    check_mask(model, mask);
    const std::size_t total = mask.total();
    const std::size_t zeros_now = total - mask.ones();
    const auto zeros_wanted = std::size_t(std::llround(target_sparsity * double(total)));
    if (zeros_wanted <= zeros_now)
        return mask;
    return prune_count(model, mask, zeros_wanted - zeros_now);
}

std::vector<double> imp_schedule(double per_round, int rounds)
{
    if (!(per_round > 0.0 && per_round < 1.0))
        throw ValidationError("per-round prune fraction must lie in (0,1)");
    if (rounds < 1)
        throw ValidationError("IMP needs at least one round");
    std::vector<double> out;
    for (int n = 1; n <= rounds; ++n)
        out.push_back(1.0 - std::pow(1.0 - per_round, n));
    return out;
}

void apply_mask(Model& model, const Mask& mask)
{
    check_mask(model, mask);
    for (const auto& [name, m] : mask.blocks) {
        Tensor& w = model.param(name);
        for (std::size_t i = 0; i < w.size(); ++i)
            if (m[i] == 0.0f)
                w[i] = 0.0f;
    }
}

std::vector<std::string> detect_layer_collapse(const Mask& mask)
{
    std::vector<std::string> out;
    for (const auto& [name, m] : mask.blocks)
        if (std::all_of(m.data().begin(), m.data().end(), [](float v) { return v == 0.0f; }))
            out.push_back(name);
    return out;
}

bool is_nested(const Mask& inner, const Mask& outer)
{
    for (const auto& [name, m] : inner.blocks) {
        const Tensor* o = outer.find(name);
        if (!o || o->shape() != m.shape())
            return false;
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i] != 0.0f && (*o)[i] == 0.0f)
                return false;
    }
    return true;
}

double masked_weight_mass(const Model& model, const Mask& mask)
{
    double mass = 0.0;
    for (const auto& [name, m] : mask.blocks) {
        const Tensor& w = model.param(name);
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i] == 0.0f)
                mass += std::abs(double(w[i]));
    }
    return mass;
}

} // namespace ltlab

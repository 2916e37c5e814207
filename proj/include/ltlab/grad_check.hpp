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

#ifndef LTLAB_GRAD_CHECK_HPP
#define LTLAB_GRAD_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "ltlab/graph.hpp"

namespace ltlab {

struct GradCheckOptions {
    double eps = 1e-4;
    std::size_t max_coords = 4096; // sampled uniformly (seeded) beyond this
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
};

/// Compares backward() against central differences of the root over every
/// trainable coordinate. Coordinates whose +/-eps probes flip a ReLU input
/// sign are skipped. Running statistics are left untouched.
template <typename Real>
GradCheckResult grad_check(BasicGraph<Real>& graph, const typename BasicGraph<Real>::Bindings& inputs,
                           const GradCheckOptions& options = {})
{
    const bool update = graph.update_running_stats();
    graph.set_update_running_stats(false);

    graph.forward(inputs);
    graph.backward();

    std::vector<std::pair<NodeId, std::size_t>> coords;
    for (NodeId id : graph.parameters())
        if (graph.node(id).trainable)
            for (std::size_t i = 0; i < graph.node(id).value.size(); ++i)
                coords.emplace_back(id, i);
    if (coords.size() > options.max_coords) {
        std::mt19937_64 rng(options.seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(options.max_coords);
        std::sort(coords.begin(), coords.end());
    }

    std::vector<std::vector<Real>> analytic;
    for (NodeId id : graph.parameters()) {
        auto& v = graph.node(id).value;
        if (graph.node(id).trainable) {
            auto g = v.grad();
            analytic.emplace_back(g.begin(), g.end());
        } else {
            analytic.emplace_back();
        }
    }
    auto param_slot = [&](NodeId id) {
        const auto& ps = graph.parameters();
        return std::size_t(std::find(ps.begin(), ps.end(), id) - ps.begin());
    };

    GradCheckResult result;
    for (auto [id, i] : coords) {
        Real& w = graph.node(id).value[i];
        const Real saved = w;
        w = Real(double(saved) + options.eps);
        graph.forward(inputs);
        const double up = graph.root_scalar();
        const auto sig_up = graph.relu_signature();
        w = Real(double(saved) - options.eps);
        graph.forward(inputs);
        const double down = graph.root_scalar();
        const auto sig_down = graph.relu_signature();
        w = saved;
        if (sig_up != sig_down) {
            ++result.skipped_kinks;
            continue;
        }
        const double numeric = (up - down) / (2.0 * options.eps);
        const double a = double(analytic[param_slot(id)][i]);
        const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-8);
        result.max_rel_error = std::max(result.max_rel_error, err);
        ++result.checked;
    }
    graph.forward(inputs);
    graph.set_update_running_stats(update);
    return result;
}

template <typename Real>
double grad_check(BasicGraph<Real>& graph, const typename BasicGraph<Real>::Bindings& inputs, double eps)
{
    return grad_check(graph, inputs, GradCheckOptions{eps}).max_rel_error;
}

} // namespace ltlab

#endif // LTLAB_GRAD_CHECK_HPP

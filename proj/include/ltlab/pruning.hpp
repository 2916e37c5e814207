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

#ifndef LTLAB_PRUNING_HPP
#define LTLAB_PRUNING_HPP

#include <map>
#include <string>
#include <vector>

#include "ltlab/model.hpp"
#include "ltlab/tensor.hpp"

namespace ltlab {

/// Binary keep/drop tensors for every prunable block. Values are exactly
/// 0.0f or 1.0f so masking is a multiply.
struct Mask {
    std::map<std::string, Tensor> blocks;

    /// All-ones mask over the model's prunable blocks.
    static Mask dense(const Model& model);

    std::size_t total() const;
    std::size_t ones() const;
    /// 1 - ones/total over prunable blocks.
    double sparsity() const;
    const Tensor* find(const std::string& block) const;

    friend bool operator==(const Mask&, const Mask&) = default;
};

enum class PruneMode { kImp, kOmp };

struct PruneSchedule {
    PruneMode mode = PruneMode::kImp;
    double per_round_fraction = 0.2;
    int rounds = 1;
    double target_sparsity = 0.0; // omp only
};

/// Zeroes the `fraction` of currently-surviving prunable weights with the
/// smallest magnitude, pooled across blocks. Exactly floor(fraction *
/// survivors) weights are removed; ties break by (block name, flat index).
Mask global_magnitude_prune(const Model& model, const Mask& mask, double fraction);

/// One-shot variant: prunes the smallest weights until round(target * total)
/// prunable weights are zero overall.
Mask prune_to_sparsity(const Model& model, const Mask& mask, double target_sparsity);

/// Cumulative sparsity after each of `rounds` rounds: 1 - (1 - per_round)^n.
std::vector<double> imp_schedule(double per_round, int rounds);

/// Multiplies every masked block into the model. Throws listing blocks that
/// are missing or differ in shape.
void apply_mask(Model& model, const Mask& mask);

/// Names of blocks whose mask is entirely zero.
std::vector<std::string> detect_layer_collapse(const Mask& mask);

/// True when every kept entry of `inner` is kept in `outer` as well.
bool is_nested(const Mask& inner, const Mask& outer);

/// Sum of |w| over masked-out coordinates.
double masked_weight_mass(const Model& model, const Mask& mask);

} // namespace ltlab

#endif // LTLAB_PRUNING_HPP

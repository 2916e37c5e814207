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

#ifndef LTLAB_MODEL_HPP
#define LTLAB_MODEL_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ltlab/arch.hpp"
#include "ltlab/graph.hpp"
#include "ltlab/tensor.hpp"

namespace ltlab {

using TensorMap = std::map<std::string, Tensor>;

/// Which scalar the model graph differentiates.
enum class LossHead { kCrossEntropy, kDistill };

/// An instantiated architecture: its graph, named parameter blocks and
/// batch-norm running statistics.
///
/// Parameter names are "<layer>.weight", "<layer>.bias", "<bn>.gamma" and
/// "<bn>.beta"; they depend only on the layer names, so a skip-injected or
/// activation-swapped spec yields the same names and shapes.
class Model {
public:
    /// He-normal conv/dense weights (std sqrt(2/fan_in)) drawn in layer order
    /// from a generator seeded with `seed`; biases 0, BN scale 1 and shift 0.
    static Model build(const ArchSpec& spec, std::uint64_t seed);

    const ArchSpec& spec() const noexcept { return spec_; }
    Graph& graph() noexcept { return graph_; }
    const Graph& graph() const noexcept { return graph_; }

    std::vector<std::string> parameter_names() const;
    std::size_t parameter_count() const;
    Tensor& param(std::string_view name) { return graph_.parameter_value(name); }
    const Tensor& param(std::string_view name) const { return graph_.parameter_value(name); }

    /// Conv and dense weight blocks, in layer order.
    std::vector<std::string> prunable_names() const;

    TensorMap parameters() const;
    /// Copies every block by name; names and shapes must match exactly.
    void load_parameters(const TensorMap& params);

    /// "<bn>.running_mean" / "<bn>.running_var" for every BN layer.
    TensorMap bn_state() const;
    void load_bn_state(const TensorMap& state);
    void reset_bn_state();

    void set_distillation(double tau, double scale);

    /// Logits in inference mode (running BN statistics).
    Tensor logits(const Tensor& x);
    /// Logits with batch statistics; running statistics are not updated.
    Tensor logits_batch_stats(const Tensor& x);

    /// Forward + backward of the chosen head. `training` selects batch
    /// statistics; `update_stats` additionally moves the running averages.
    /// Returns the 64-bit loss; gradients land in the parameter tensors.
    double loss_and_grad(const Tensor& x, const Tensor& target, LossHead head, bool training, bool update_stats,
                         const Tensor* teacher_logits = nullptr);

    /// Loss value only (no backward).
    double loss(const Tensor& x, const Tensor& target, LossHead head, bool training,
                const Tensor* teacher_logits = nullptr);

    /// Activation layers as (layer name, graph node).
    std::vector<std::pair<std::string, NodeId>> activation_nodes() const;

    NodeId logits_node() const noexcept { return logits_; }
    NodeId cross_entropy_node() const noexcept { return ce_; }

private:
    double run_loss(const Tensor& x, const Tensor& target, LossHead head, bool training, bool update_stats,
                    const Tensor* teacher_logits);
    Graph::Bindings bind(const Tensor& x, const Tensor* target, const Tensor* teacher) const;

    ArchSpec spec_;
    Graph graph_;
    NodeId input_ = 0, target_ = 0, teacher_ = 0, logits_ = 0, ce_ = 0, kd_ = 0;
    std::vector<std::string> bn_layers_;
    std::vector<std::pair<std::string, NodeId>> activations_;
    std::vector<std::string> prunable_;
};

/// Elementwise relu, swish (x * sigmoid(x)) or mish (x * tanh(softplus(x))).
Tensor activation(ActivationKind kind, const Tensor& x);

struct LayerSparsity {
    std::string layer;
    double fraction = 0.0;
};

/// Default "is zero" threshold: exact zero for ReLU, 1e-6 for smooth kinds.
double default_sparsity_threshold(ActivationKind kind);

/// Fraction of activation outputs with |value| <= threshold, per activation
/// layer, over the whole batch (inference mode).
std::vector<LayerSparsity> activation_sparsity(Model& model, const Tensor& batch,
                                               std::optional<double> threshold = std::nullopt);

/// Prepends the batch extent to a per-sample shape.
Shape batched(std::size_t batch, const Shape& sample);

} // namespace ltlab

#endif // LTLAB_MODEL_HPP

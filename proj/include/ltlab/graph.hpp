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

#ifndef LTLAB_GRAPH_HPP
#define LTLAB_GRAPH_HPP

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ltlab/tensor.hpp"

namespace ltlab {

using NodeId = std::size_t;

enum class OpKind : std::uint8_t {
    kInput,
    kParameter,
    kAdd,
    kMul,
    kMatMul,
    kAddBias,
    kConv2d,
    kBatchNorm,
    kRelu,
    kSwish,
    kMish,
    kGlobalAvgPool,
    kFlatten,
    kSoftmax,
    kLogSoftmax,
    kSum,
    kMean,
    kSoftCrossEntropy,
    kDistillKL,
};

std::string_view op_name(OpKind kind);

struct ConvAttr {
    std::size_t stride = 1;
    std::size_t pad = 0;
};

struct BatchNormAttr {
    double momentum = 0.1;
    double eps = 1e-8;
};

struct DistillAttr {
    double tau = 1.0;
    double scale = 1.0; // multiplies the mean KL; training uses tau^2
};

/// Extent of a convolution output along one spatial axis.
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad)
{
    return (in + 2 * pad - kernel) / stride + 1;
}

template <typename Real>
struct GraphNode {
    OpKind kind = OpKind::kInput;
    std::string name;
    std::vector<NodeId> inputs;
    BasicTensor<Real> value;
    std::vector<Real> adjoint;
    bool trainable = false;
    bool needs_grad = false;

    ConvAttr conv;
    BatchNormAttr bn;
    DistillAttr distill;

    // Batch-norm running statistics (per channel / feature).
    std::vector<Real> running_mean;
    std::vector<Real> running_var;

    // Saved forward state for backward. Conv: im2col columns. BN: normalized
    // input and per-channel inverse std. Losses: probabilities.
    std::vector<Real> saved;
    std::vector<Real> saved_aux;
    double scalar = 0.0;      // reductions keep their 64-bit accumulation here
    bool batch_stats = false; // batch norm: last forward normalized with batch statistics
};

/// Static computation graph with reverse-mode differentiation.
///
/// Nodes are appended in topological order by construction. Input leaves are
/// rebound on every forward call; parameter leaves persist. Exactly one scalar
/// node is the loss root; forward evaluates only the root's ancestors.
template <typename Real>
class BasicGraph {
public:
    using TensorT = BasicTensor<Real>;
    using Node = GraphNode<Real>;
    using Bindings = std::map<std::string, TensorT, std::less<>>;

    NodeId input(std::string name);
    NodeId parameter(std::string name, TensorT init, bool trainable = true);

    NodeId add(NodeId a, NodeId b, std::string name = {});
    NodeId mul(NodeId a, NodeId b, std::string name = {});
    NodeId matmul(NodeId a, NodeId b, std::string name = {});
    NodeId add_bias(NodeId x, NodeId bias, std::string name = {});
    NodeId conv2d(NodeId x, NodeId weight, std::optional<NodeId> bias, ConvAttr attr, std::string name = {});
    NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, BatchNormAttr attr, std::string name = {});
    NodeId relu(NodeId x, std::string name = {});
    NodeId swish(NodeId x, std::string name = {});
    NodeId mish(NodeId x, std::string name = {});
    NodeId global_avg_pool(NodeId x, std::string name = {});
    NodeId flatten(NodeId x, std::string name = {});
    NodeId softmax(NodeId x, std::string name = {});
    NodeId log_softmax(NodeId x, std::string name = {});
    NodeId sum(NodeId x, std::string name = {});
    NodeId mean(NodeId x, std::string name = {});
    /// Mean over rows of -sum_k target_k log softmax(logits)_k.
    NodeId soft_cross_entropy(NodeId logits, NodeId target, std::string name = {});
    /// scale * mean over rows of KL(softmax(teacher/tau) || softmax(student/tau)).
    /// No gradient flows into the teacher operand.
    NodeId distill_kl(NodeId student, NodeId teacher, DistillAttr attr, std::string name = {});

    void set_root(NodeId id);
    NodeId root() const;

    /// Batch-norm behaviour: training uses batch statistics, otherwise the
    /// running statistics. Running statistics are updated only when both
    /// training and update_running_stats are set.
    void set_training(bool training) noexcept { training_ = training; }
    bool training() const noexcept { return training_; }
    void set_update_running_stats(bool update) noexcept { update_stats_ = update; }
    bool update_running_stats() const noexcept { return update_stats_; }

    /// Evaluates the root's ancestors with the given input bindings and
    /// returns the root value. Throws ValidationError naming the node on
    /// shape mismatch or a missing binding.
    const TensorT& forward(const Bindings& inputs);

    /// Root value as accumulated in 64-bit by loss/reduction nodes.
    double root_scalar() const;

    /// Populates the gradient slot of every trainable parameter the root
    /// depends on. Requires a preceding forward.
    void backward();

    /// First node whose last forward output held a NaN or infinity.
    std::optional<NodeId> nonfinite_node() const noexcept { return nonfinite_; }

    /// Sign pattern of every ReLU input from the last forward.
    std::vector<std::uint8_t> relu_signature() const;

    std::size_t size() const noexcept { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_.at(id); }
    Node& node(NodeId id) { return nodes_.at(id); }
    const TensorT& value(NodeId id) const { return nodes_.at(id).value; }
    std::optional<NodeId> find(std::string_view name) const;

    /// Parameter leaves in creation order.
    const std::vector<NodeId>& parameters() const noexcept { return params_; }
    TensorT& parameter_value(std::string_view name);
    const TensorT& parameter_value(std::string_view name) const;

    std::map<std::string, TensorT> gradients() const;

    /// Same nodes, attributes, parameter values and running statistics with
    /// every value cast to Real. Forward state is not carried over.
    template <typename Other>
    static BasicGraph cast_from(const BasicGraph<Other>& other);

private:
    template <typename>
    friend class BasicGraph;

    NodeId push(Node node);
    NodeId unary(OpKind kind, NodeId x, std::string name);
    void refresh_active();
    void forward_node(NodeId id);
    void backward_node(NodeId id);
    [[noreturn]] void shape_error(NodeId id, const std::string& what) const;

    std::vector<Node> nodes_;
    std::vector<NodeId> params_;
    std::vector<char> active_;
    std::optional<NodeId> root_;
    bool training_ = true;
    bool update_stats_ = true;
    bool forward_done_ = false;
    std::optional<NodeId> nonfinite_;
};

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t)
{
    return BasicTensor<To>(t.shape(), std::vector<To>(t.data().begin(), t.data().end()));
}

template <typename Real>
template <typename Other>
BasicGraph<Real> BasicGraph<Real>::cast_from(const BasicGraph<Other>& other)
{
    BasicGraph out;
    for (const auto& n : other.nodes_) {
        Node c;
        c.kind = n.kind;
        c.name = n.name;
        c.inputs = n.inputs;
        if (n.value.size() > 0)
            c.value = tensor_cast<Real>(n.value);
        c.trainable = n.trainable;
        c.needs_grad = n.needs_grad;
        c.conv = n.conv;
        c.bn = n.bn;
        c.distill = n.distill;
        c.running_mean.assign(n.running_mean.begin(), n.running_mean.end());
        c.running_var.assign(n.running_var.begin(), n.running_var.end());
        out.nodes_.push_back(std::move(c));
    }
    out.params_ = other.params_;
    out.active_ = other.active_;
    out.root_ = other.root_;
    out.training_ = other.training_;
    out.update_stats_ = other.update_stats_;
    return out;
}

using Graph = BasicGraph<float>;
using GraphD = BasicGraph<double>;

extern template class BasicGraph<float>;
extern template class BasicGraph<double>;

} // namespace ltlab

#endif // LTLAB_GRAPH_HPP

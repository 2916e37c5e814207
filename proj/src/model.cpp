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

#include "ltlab/model.hpp"

#include <cmath>
#include <random>

#include "ltlab/error.hpp"

namespace ltlab {

Shape batched(std::size_t batch, const Shape& sample)
{
    Shape s{batch};
    s.insert(s.end(), sample.begin(), sample.end());
    return s;
}

Model Model::build(const ArchSpec& raw, std::uint64_t seed)
{
    Model m;
    m.spec_ = normalized(raw);
    const auto shapes = infer_shapes(m.spec_);
    std::mt19937_64 rng(seed);

    auto he = [&](Shape shape, std::size_t fan_in) {
        Tensor t(std::move(shape));
        std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / float(fan_in)));
        for (float& v : t.data())
            v = dist(rng);
        return t;
    };

    Graph& g = m.graph_;
    std::map<std::string, NodeId> out;
    m.input_ = g.input("input");
    out["input"] = m.input_;

    for (const LayerDesc& d : m.spec_.layers) {
        const Shape& in_shape = shapes.at(d.inputs[0]);
        const NodeId x = out.at(d.inputs[0]);
        NodeId y = 0;
        switch (d.kind) {
        case LayerKind::kConv2d: {
            const std::size_t fan_in = in_shape[0] * d.kernel * d.kernel;
            const NodeId w = g.parameter(d.name + ".weight", he({d.out, in_shape[0], d.kernel, d.kernel}, fan_in));
            std::optional<NodeId> b;
            if (d.bias)
                b = g.parameter(d.name + ".bias", Tensor({d.out}, 0.0f));
            y = g.conv2d(x, w, b, {d.stride, d.pad}, d.name);
            m.prunable_.push_back(d.name + ".weight");
            break;
        }
        case LayerKind::kBatchNorm: {
            const std::size_t ch = in_shape[0];
            const NodeId gamma = g.parameter(d.name + ".gamma", Tensor({ch}, 1.0f));
            const NodeId beta = g.parameter(d.name + ".beta", Tensor({ch}, 0.0f));
            y = g.batch_norm(x, gamma, beta, {}, d.name);
            m.bn_layers_.push_back(d.name);
            break;
        }
        case LayerKind::kDense: {
            const std::size_t fan_in = in_shape[0];
            const NodeId w = g.parameter(d.name + ".weight", he({fan_in, d.out}, fan_in));
            y = g.matmul(x, w, d.name + ".matmul");
            if (d.bias)
                y = g.add_bias(y, g.parameter(d.name + ".bias", Tensor({d.out}, 0.0f)), d.name);
            m.prunable_.push_back(d.name + ".weight");
            break;
        }
        case LayerKind::kActivation:
            switch (m.spec_.activation) {
            case ActivationKind::kRelu: y = g.relu(x, d.name); break;
            case ActivationKind::kSwish: y = g.swish(x, d.name); break;
            case ActivationKind::kMish: y = g.mish(x, d.name); break;
            }
            m.activations_.emplace_back(d.name, y);
            break;
        case LayerKind::kResidualAdd:
            y = g.add(x, out.at(d.inputs[1]), d.name);
            break;
        case LayerKind::kGlobalAvgPool:
            y = g.global_avg_pool(x, d.name);
            break;
        case LayerKind::kFlatten:
            y = g.flatten(x, d.name);
            break;
        }
        out[d.name] = y;
    }
    m.logits_ = out.at(m.spec_.layers.back().name);
    m.target_ = g.input("target");
    m.teacher_ = g.input("teacher");
    m.ce_ = g.soft_cross_entropy(m.logits_, m.target_, "loss.ce");
    m.kd_ = g.distill_kl(m.logits_, m.teacher_, {}, "loss.kd");
    g.set_root(m.logits_);
    return m;
}

std::vector<std::string> Model::parameter_names() const
{
    std::vector<std::string> names;
    for (NodeId id : graph_.parameters())
        names.push_back(graph_.node(id).name);
    return names;
}

std::size_t Model::parameter_count() const
{
    std::size_t n = 0;
    for (NodeId id : graph_.parameters())
        n += graph_.node(id).value.size();
    return n;
}

std::vector<std::string> Model::prunable_names() const
{
    return prunable_;
}

TensorMap Model::parameters() const
{
    TensorMap out;
    for (NodeId id : graph_.parameters()) {
        Tensor t = graph_.node(id).value;
        t.clear_grad();
        out.emplace(graph_.node(id).name, std::move(t));
    }
    return out;
}

void Model::load_parameters(const TensorMap& params)
{
    std::string missing;
    for (NodeId id : graph_.parameters()) {
        auto& n = graph_.node(id);
        auto it = params.find(n.name);
        if (it == params.end()) {
            missing += " " + n.name;
            continue;
        }
        if (it->second.shape() != n.value.shape())
            throw ValidationError("parameter '" + n.name + "' has shape " + shape_to_string(it->second.shape())
                                  + ", model expects " + shape_to_string(n.value.shape()));
        std::copy(it->second.data().begin(), it->second.data().end(), n.value.data().begin());
    }
    if (!missing.empty())
        throw ValidationError("parameter set is missing blocks:" + missing);
}

TensorMap Model::bn_state() const
{
    TensorMap out;
    for (const std::string& name : bn_layers_) {
        const auto& n = graph_.node(*graph_.find(name));
        out.emplace(name + ".running_mean", Tensor({n.running_mean.size()}, n.running_mean));
        out.emplace(name + ".running_var", Tensor({n.running_var.size()}, n.running_var));
    }
    return out;
}

void Model::load_bn_state(const TensorMap& state)
{
    for (const std::string& name : bn_layers_) {
        auto& n = graph_.node(*graph_.find(name));
        auto mean = state.find(name + ".running_mean");
        auto var = state.find(name + ".running_var");
        if (mean == state.end() || var == state.end())
            throw ValidationError("missing running statistics for batchnorm '" + name + "'");
        if (mean->second.size() != n.running_mean.size() || var->second.size() != n.running_var.size())
            throw ValidationError("running statistics for '" + name + "' have the wrong length");
        n.running_mean = mean->second.storage();
        n.running_var = var->second.storage();
    }
}

void Model::reset_bn_state()
{
    for (const std::string& name : bn_layers_) {
        auto& n = graph_.node(*graph_.find(name));
        std::fill(n.running_mean.begin(), n.running_mean.end(), 0.0f);
        std::fill(n.running_var.begin(), n.running_var.end(), 1.0f);
    }
}

void Model::set_distillation(double tau, double scale)
{
    if (!(tau > 0))
        throw ValidationError("distillation temperature must be positive");
    graph_.node(kd_).distill = {tau, scale};
}

Graph::Bindings Model::bind(const Tensor& x, const Tensor* target, const Tensor* teacher) const
{
    if (x.rank() != spec_.input_shape.size() + 1
        || !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), x.shape().begin() + 1))
        throw ValidationError("batch shape " + shape_to_string(x.shape()) + " does not match model input "
                              + shape_to_string(spec_.input_shape));
    Graph::Bindings b;
    b.emplace("input", x);
    if (target)
        b.emplace("target", *target);
    if (teacher)
        b.emplace("teacher", *teacher);
    return b;
}

Tensor Model::logits(const Tensor& x)
{
    graph_.set_training(false);
    graph_.set_update_running_stats(false);
    graph_.set_root(logits_);
    return graph_.forward(bind(x, nullptr, nullptr));
}

Tensor Model::logits_batch_stats(const Tensor& x)
{
    graph_.set_training(true);
    graph_.set_update_running_stats(false);
    graph_.set_root(logits_);
    return graph_.forward(bind(x, nullptr, nullptr));
}

double Model::loss_and_grad(const Tensor& x, const Tensor& target, LossHead head, bool training, bool update_stats,
                            const Tensor* teacher_logits)
{
    const double value = run_loss(x, target, head, training, update_stats, teacher_logits);
    graph_.backward();
    return value;
}

double Model::loss(const Tensor& x, const Tensor& target, LossHead head, bool training, const Tensor* teacher_logits)
{
    return run_loss(x, target, head, training, false, teacher_logits);
}

double Model::run_loss(const Tensor& x, const Tensor& target, LossHead head, bool training, bool update_stats,
                       const Tensor* teacher_logits)
{
    if (head == LossHead::kDistill && !teacher_logits)
        throw ValidationError("distillation head needs teacher logits");
    graph_.set_training(training);
    graph_.set_update_running_stats(update_stats);
    graph_.set_root(head == LossHead::kDistill ? kd_ : ce_);
    graph_.forward(bind(x, &target, teacher_logits));
    return graph_.root_scalar();
}

std::vector<std::pair<std::string, NodeId>> Model::activation_nodes() const
{
    return activations_;
}

Tensor activation(ActivationKind kind, const Tensor& x)
{
    Graph g;
    const NodeId in = g.input("x");
    NodeId out = 0;
    switch (kind) {
    case ActivationKind::kRelu: out = g.relu(in); break;
    case ActivationKind::kSwish: out = g.swish(in); break;
    case ActivationKind::kMish: out = g.mish(in); break;
    }
    g.set_root(out);
    Graph::Bindings b;
    b.emplace("x", x);
    return g.forward(b);
}

double default_sparsity_threshold(ActivationKind kind)
{
    return kind == ActivationKind::kRelu ? 0.0 : 1e-6;
}

std::vector<LayerSparsity> activation_sparsity(Model& model, const Tensor& batch, std::optional<double> threshold)
{
    if (batch.rank() == 0 || batch.extent(0) == 0)
        throw ValidationError("activation sparsity needs a non-empty batch");
    const double thr = threshold.value_or(default_sparsity_threshold(model.spec().activation));
    model.logits(batch);
    std::vector<LayerSparsity> out;
    for (const auto& [name, id] : model.activation_nodes()) {
        const Tensor& v = model.graph().value(id);
        std::size_t zeros = 0;
        for (float a : v.data())
            if (std::abs(double(a)) <= thr)
                ++zeros;
        out.push_back({name, double(zeros) / double(v.size())});
    }
    return out;
}

} // namespace ltlab

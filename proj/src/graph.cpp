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

#include "ltlab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Core>

namespace ltlab {

std::string shape_to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::string_view op_name(OpKind kind)
{
    switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kBatchNorm: return "batch_norm";
    case OpKind::kRelu: return "relu";
    case OpKind::kSwish: return "swish";
    case OpKind::kMish: return "mish";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSoftCrossEntropy: return "soft_cross_entropy";
    case OpKind::kDistillKL: return "distill_kl";
    }
    return "unknown";
}

namespace {

template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
using MatMap = Eigen::Map<RowMatrix<Real>>;

template <typename Real>
using ConstMatMap = Eigen::Map<const RowMatrix<Real>>;

template <typename Real>
Real sigmoid(Real x)
{
    if (x >= 0)
        return Real(1) / (Real(1) + std::exp(-x));
    const Real e = std::exp(x);
    return e / (Real(1) + e);
}

template <typename Real>
Real softplus(Real x)
{
    return std::max(x, Real(0)) + std::log1p(std::exp(-std::abs(x)));
}

// Row-wise stable log-softmax of an [rows, cols] block, scaled by 1/temperature.
template <typename Real>
void log_softmax_rows(std::span<const Real> z, std::size_t rows, std::size_t cols, double inv_temp,
                      std::span<Real> out)
{
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* zr = z.data() + r * cols;
        double mx = -INFINITY;
        for (std::size_t k = 0; k < cols; ++k)
            mx = std::max(mx, double(zr[k]) * inv_temp);
        double s = 0.0;
        for (std::size_t k = 0; k < cols; ++k)
            s += std::exp(double(zr[k]) * inv_temp - mx);
        const double lse = mx + std::log(s);
        for (std::size_t k = 0; k < cols; ++k)
            out[r * cols + k] = Real(double(zr[k]) * inv_temp - lse);
    }
}

} // namespace

template <typename Real>
NodeId BasicGraph<Real>::push(Node node)
{
    for (NodeId in : node.inputs) {
        if (in >= nodes_.size())
            throw ValidationError("node '" + node.name + "' references unknown input id " + std::to_string(in));
        node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
    }
    if (node.name.empty())
        node.name = std::string(op_name(node.kind)) + "_" + std::to_string(nodes_.size());
    nodes_.push_back(std::move(node));
    forward_done_ = false;
    if (root_)
        refresh_active();
    return nodes_.size() - 1;
}

template <typename Real>
NodeId BasicGraph<Real>::input(std::string name)
{
    if (find(name))
        throw ValidationError("duplicate node name '" + name + "'");
    Node n;
    n.kind = OpKind::kInput;
    n.name = std::move(name);
    return push(std::move(n));
}

template <typename Real>
NodeId BasicGraph<Real>::parameter(std::string name, TensorT init, bool trainable)
{
    if (find(name))
        throw ValidationError("duplicate node name '" + name + "'");
    Node n;
    n.kind = OpKind::kParameter;
    n.name = std::move(name);
    n.value = std::move(init);
    n.trainable = trainable;
    n.needs_grad = trainable;
    const NodeId id = push(std::move(n));
    params_.push_back(id);
    return id;
}

template <typename Real>
NodeId BasicGraph<Real>::unary(OpKind kind, NodeId x, std::string name)
{
    Node n;
    n.kind = kind;
    n.name = std::move(name);
    n.inputs = {x};
    return push(std::move(n));
}

template <typename Real>
NodeId BasicGraph<Real>::add(NodeId a, NodeId b, std::string name)
{
    Node n;
    n.kind = OpKind::kAdd;
    n.name = std::move(name);
    n.inputs = {a, b};
    return push(std::move(n));
}

template <typename Real>
NodeId BasicGraph<Real>::mul(NodeId a, NodeId b, std::string name)
{
    Node n;
    n.kind = OpKind::kMul;
    n.name = std::move(name);
    n.inputs = {a, b};
    return push(std::move(n));
}

template <typename Real>
NodeId BasicGraph<Real>::matmul(NodeId a, NodeId b, std::string name)
{
    Node n;
    n.kind = OpKind::kMatMul;
    n.name = std::move(name);
    n.inputs = {a, b};
    return push(std::move(n));
}

template <typename Real>
NodeId BasicGraph<Real>::add_bias(NodeId x, NodeId bias, std::string name)
{
    Node n;
    n.kind = OpKind::kAddBias;
    n.name = std::move(name);
    n.inputs = {x, bias};
    return push(std::move(n));
}

template <typename Real>
NodeId BasicGraph<Real>::conv2d(NodeId x, NodeId weight, std::optional<NodeId> bias, ConvAttr attr, std::string name)
{
    if (attr.stride == 0)
        throw ValidationError("conv2d stride must be positive");
    Node n;
    n.kind = OpKind::kConv2d;
    n.name = std::move(name);
    n.inputs = {x, weight};
    if (bias)
        n.inputs.push_back(*bias);
    n.conv = attr;
    return push(std::move(n));
}

template <typename Real>
NodeId BasicGraph<Real>::batch_norm(NodeId x, NodeId gamma, NodeId beta, BatchNormAttr attr, std::string name)
{
    Node n;
    n.kind = OpKind::kBatchNorm;
    n.name = std::move(name);
    n.inputs = {x, gamma, beta};
    n.bn = attr;
    const std::size_t channels = nodes_.at(gamma).value.size();
    n.running_mean.assign(channels, Real(0));
    n.running_var.assign(channels, Real(1));
    return push(std::move(n));
}

template <typename Real>
NodeId BasicGraph<Real>::relu(NodeId x, std::string name)
{
    return unary(OpKind::kRelu, x, std::move(name));
}
template <typename Real>
NodeId BasicGraph<Real>::swish(NodeId x, std::string name)
{
    return unary(OpKind::kSwish, x, std::move(name));
}
template <typename Real>
NodeId BasicGraph<Real>::mish(NodeId x, std::string name)
{
    return unary(OpKind::kMish, x, std::move(name));
}
template <typename Real>
NodeId BasicGraph<Real>::global_avg_pool(NodeId x, std::string name)
{
    return unary(OpKind::kGlobalAvgPool, x, std::move(name));
}
template <typename Real>
NodeId BasicGraph<Real>::flatten(NodeId x, std::string name)
{
    return unary(OpKind::kFlatten, x, std::move(name));
}
template <typename Real>
NodeId BasicGraph<Real>::softmax(NodeId x, std::string name)
{
    return unary(OpKind::kSoftmax, x, std::move(name));
}
template <typename Real>
NodeId BasicGraph<Real>::log_softmax(NodeId x, std::string name)
{
    return unary(OpKind::kLogSoftmax, x, std::move(name));
}
template <typename Real>
NodeId BasicGraph<Real>::sum(NodeId x, std::string name)
{
    return unary(OpKind::kSum, x, std::move(name));
}
template <typename Real>
NodeId BasicGraph<Real>::mean(NodeId x, std::string name)
{
    return unary(OpKind::kMean, x, std::move(name));
}

template <typename Real>
NodeId BasicGraph<Real>::soft_cross_entropy(NodeId logits, NodeId target, std::string name)
{
    Node n;
    n.kind = OpKind::kSoftCrossEntropy;
    n.name = std::move(name);
    n.inputs = {logits, target};
    return push(std::move(n));
}

template <typename Real>
NodeId BasicGraph<Real>::distill_kl(NodeId student, NodeId teacher, DistillAttr attr, std::string name)
{
    if (!(attr.tau > 0))
        throw ValidationError("distillation temperature must be positive");
    Node n;
    n.kind = OpKind::kDistillKL;
    n.name = std::move(name);
    n.inputs = {student, teacher};
    n.distill = attr;
    return push(std::move(n));
}

template <typename Real>
void BasicGraph<Real>::set_root(NodeId id)
{
    if (id >= nodes_.size())
        throw ValidationError("root id " + std::to_string(id) + " out of range");
    root_ = id;
    forward_done_ = false;
    refresh_active();
}

template <typename Real>
NodeId BasicGraph<Real>::root() const
{
    if (!root_)
        throw ValidationError("graph has no root");
    return *root_;
}

template <typename Real>
void BasicGraph<Real>::refresh_active()
{
    active_.assign(nodes_.size(), 0);
    active_[*root_] = 1;
    for (std::size_t i = *root_ + 1; i-- > 0;) {
        if (!active_[i])
            continue;
        for (NodeId in : nodes_[i].inputs)
            active_[in] = 1;
    }
}

template <typename Real>
std::optional<NodeId> BasicGraph<Real>::find(std::string_view name) const
{
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].name == name)
            return i;
    return std::nullopt;
}

template <typename Real>
typename BasicGraph<Real>::TensorT& BasicGraph<Real>::parameter_value(std::string_view name)
{
    for (NodeId id : params_)
        if (nodes_[id].name == name)
            return nodes_[id].value;
    throw ValidationError("no parameter named '" + std::string(name) + "'");
}

template <typename Real>
const typename BasicGraph<Real>::TensorT& BasicGraph<Real>::parameter_value(std::string_view name) const
{
    return const_cast<BasicGraph*>(this)->parameter_value(name);
}

template <typename Real>
std::map<std::string, typename BasicGraph<Real>::TensorT> BasicGraph<Real>::gradients() const
{
    std::map<std::string, TensorT> out;
    for (NodeId id : params_) {
        const Node& n = nodes_[id];
        if (!n.trainable || !n.value.has_grad())
            continue;
        const auto g = n.value.grad();
        out.emplace(n.name, TensorT(n.value.shape(), std::vector<Real>(g.begin(), g.end())));
    }
    return out;
}

template <typename Real>
void BasicGraph<Real>::shape_error(NodeId id, const std::string& what) const
{
    const Node& n = nodes_[id];
    std::ostringstream os;
    os << "node " << id << " (" << op_name(n.kind) << " '" << n.name << "'): " << what << "; input shapes";
    for (NodeId in : n.inputs)
        os << ' ' << shape_to_string(nodes_[in].value.shape());
    throw ValidationError(os.str());
}

template <typename Real>
const typename BasicGraph<Real>::TensorT& BasicGraph<Real>::forward(const Bindings& inputs)
{
    if (!root_)
        throw ValidationError("forward on graph without a root");
    nonfinite_.reset();
    for (NodeId id = 0; id <= *root_; ++id) {
        if (!active_[id])
            continue;
        Node& n = nodes_[id];
        if (n.kind == OpKind::kInput) {
            auto it = inputs.find(n.name);
            if (it == inputs.end())
                throw ValidationError("node " + std::to_string(id) + " (input '" + n.name + "'): not bound");
            n.value = it->second;
            n.value.clear_grad();
        } else if (n.kind != OpKind::kParameter) {
            forward_node(id);
        }
        if (!nonfinite_) {
            for (Real v : n.value.data())
                if (!std::isfinite(v)) {
                    nonfinite_ = id;
                    break;
                }
        }
    }
    forward_done_ = true;
    return nodes_[*root_].value;
}

template <typename Real>
double BasicGraph<Real>::root_scalar() const
{
    const Node& n = nodes_.at(root());
    switch (n.kind) {
    case OpKind::kSum:
    case OpKind::kMean:
    case OpKind::kSoftCrossEntropy:
    case OpKind::kDistillKL:
        return n.scalar;
    default:
        return double(n.value.item());
    }
}

template <typename Real>
std::vector<std::uint8_t> BasicGraph<Real>::relu_signature() const
{
    std::vector<std::uint8_t> sig;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        if (nodes_[id].kind != OpKind::kRelu || id >= active_.size() || !active_[id])
            continue;
        for (Real v : nodes_[nodes_[id].inputs[0]].value.data())
            sig.push_back(v > 0 ? 1 : 0);
    }
    return sig;
}

template <typename Real>
void BasicGraph<Real>::forward_node(NodeId id)
{
    Node& n = nodes_[id];
    auto in = [&](std::size_t i) -> const TensorT& { return nodes_[n.inputs[i]].value; };

    switch (n.kind) {
    case OpKind::kAdd:
    case OpKind::kMul: {
        const TensorT& a = in(0);
        const TensorT& b = in(1);
        if (a.shape() != b.shape())
            shape_error(id, "operands must have identical shapes");
        TensorT out(a.shape());
        auto o = out.data();
        auto x = a.data();
        auto y = b.data();
        if (n.kind == OpKind::kAdd)
            for (std::size_t i = 0; i < o.size(); ++i)
                o[i] = x[i] + y[i];
        else
            for (std::size_t i = 0; i < o.size(); ++i)
                o[i] = x[i] * y[i];
        n.value = std::move(out);
        break;
    }
    case OpKind::kMatMul: {
        const TensorT& a = in(0);
        const TensorT& b = in(1);
        if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
            shape_error(id, "matmul needs [n,k] x [k,m]");
        const std::size_t rows = a.extent(0), inner = a.extent(1), cols = b.extent(1);
        TensorT out({rows, cols});
        MatMap<Real>(out.data().data(), rows, cols).noalias() =
            ConstMatMap<Real>(a.data().data(), rows, inner) * ConstMatMap<Real>(b.data().data(), inner, cols);
        n.value = std::move(out);
        break;
    }
    case OpKind::kAddBias: {
        const TensorT& x = in(0);
        const TensorT& b = in(1);
        if (x.rank() != 2 || b.rank() != 1 || x.extent(1) != b.extent(0))
            shape_error(id, "add_bias needs [n,m] + [m]");
        TensorT out(x.shape());
        const std::size_t m = b.size();
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = x[i] + b[i % m];
        n.value = std::move(out);
        break;
    }
    case OpKind::kConv2d: {
        const TensorT& x = in(0);
        const TensorT& w = in(1);
        if (x.rank() != 4 || w.rank() != 4 || x.extent(1) != w.extent(1))
            shape_error(id, "conv2d needs x [N,C,H,W] and weight [O,C,kh,kw]");
        const std::size_t batch = x.extent(0), ch = x.extent(1), h = x.extent(2), wd = x.extent(3);
        const std::size_t oc = w.extent(0), kh = w.extent(2), kw = w.extent(3);
        const std::size_t s = n.conv.stride, p = n.conv.pad;
        if (h + 2 * p < kh || wd + 2 * p < kw)
            shape_error(id, "kernel larger than padded input");
        if (n.inputs.size() == 3 && (in(2).rank() != 1 || in(2).extent(0) != oc))
            shape_error(id, "conv bias must be [O]");
        const std::size_t oh = conv_out_extent(h, kh, s, p), ow = conv_out_extent(wd, kw, s, p);
        const std::size_t plane = oh * ow;
        const std::size_t rows = ch * kh * kw;
        const std::size_t cols = batch * plane;

        n.saved.assign(rows * cols, Real(0));
        const Real* xd = x.data().data();
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t ki = 0; ki < kh; ++ki)
                for (std::size_t kj = 0; kj < kw; ++kj) {
                    Real* row = n.saved.data() + ((c * kh + ki) * kw + kj) * cols;
                    for (std::size_t b = 0; b < batch; ++b) {
                        const Real* xp = xd + (b * ch + c) * h * wd;
                        for (std::size_t r = 0; r < oh; ++r) {
                            const std::ptrdiff_t ih = std::ptrdiff_t(r * s + ki) - std::ptrdiff_t(p);
                            if (ih < 0 || ih >= std::ptrdiff_t(h))
                                continue;
                            Real* dst = row + b * plane + r * ow;
                            for (std::size_t q = 0; q < ow; ++q) {
                                const std::ptrdiff_t iw = std::ptrdiff_t(q * s + kj) - std::ptrdiff_t(p);
                                if (iw >= 0 && iw < std::ptrdiff_t(wd))
                                    dst[q] = xp[ih * std::ptrdiff_t(wd) + iw];
                            }
                        }
                    }
                }

        RowMatrix<Real> prod = ConstMatMap<Real>(w.data().data(), oc, rows) * ConstMatMap<Real>(n.saved.data(), rows, cols);
        TensorT out({batch, oc, oh, ow});
        Real* od = out.data().data();
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < oc; ++o) {
                const Real bias = n.inputs.size() == 3 ? in(2)[o] : Real(0);
                const Real* src = prod.data() + o * cols + b * plane;
                Real* dst = od + (b * oc + o) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    dst[i] = src[i] + bias;
            }
        n.value = std::move(out);
        break;
    }
    case OpKind::kBatchNorm: {
        const TensorT& x = in(0);
        const TensorT& gamma = in(1);
        const TensorT& beta = in(2);
        if ((x.rank() != 2 && x.rank() != 4) || gamma.rank() != 1 || beta.shape() != gamma.shape()
            || x.extent(1) != gamma.extent(0))
            shape_error(id, "batch_norm needs x [N,C] or [N,C,H,W] with gamma/beta [C]");
        const std::size_t batch = x.extent(0), ch = x.extent(1);
        const std::size_t plane = x.rank() == 4 ? x.extent(2) * x.extent(3) : 1;
        const std::size_t count = batch * plane;
        n.batch_stats = training_;
        n.saved.resize(x.size());
        n.saved_aux.resize(ch);
        TensorT out(x.shape());
        const Real* xd = x.data().data();
        for (std::size_t c = 0; c < ch; ++c) {
            double mu, var;
            if (training_) {
                double s = 0.0;
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t i = 0; i < plane; ++i)
                        s += xd[(b * ch + c) * plane + i];
                mu = s / double(count);
                double ss = 0.0;
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double d = xd[(b * ch + c) * plane + i] - mu;
                        ss += d * d;
                    }
                var = ss / double(count);
                if (update_stats_) {
                    const double m = n.bn.momentum;
                    const double unbiased = count > 1 ? var * double(count) / double(count - 1) : var;
                    n.running_mean[c] = Real((1.0 - m) * double(n.running_mean[c]) + m * mu);
                    n.running_var[c] = Real((1.0 - m) * double(n.running_var[c]) + m * unbiased);
                }
            } else {
                mu = n.running_mean[c];
                var = n.running_var[c];
            }
            const double inv_std = 1.0 / std::sqrt(var + n.bn.eps);
            n.saved_aux[c] = Real(inv_std);
            const Real g = gamma[c], bt = beta[c];
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t k = (b * ch + c) * plane + i;
                    const Real xh = Real((double(xd[k]) - mu) * inv_std);
                    n.saved[k] = xh;
                    out[k] = g * xh + bt;
                }
        }
        n.value = std::move(out);
        break;
    }
    case OpKind::kRelu:
    case OpKind::kSwish:
    case OpKind::kMish: {
        const TensorT& x = in(0);
        TensorT out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const Real v = x[i];
            switch (n.kind) {
            case OpKind::kRelu: out[i] = v > 0 ? v : Real(0); break;
            case OpKind::kSwish: out[i] = v * sigmoid(v); break;
            default: out[i] = v * std::tanh(softplus(v)); break;
            }
        }
        n.value = std::move(out);
        break;
    }
    case OpKind::kGlobalAvgPool: {
        const TensorT& x = in(0);
        if (x.rank() != 4)
            shape_error(id, "global_avg_pool needs [N,C,H,W]");
        const std::size_t bc = x.extent(0) * x.extent(1);
        const std::size_t plane = x.extent(2) * x.extent(3);
        TensorT out({x.extent(0), x.extent(1)});
        for (std::size_t k = 0; k < bc; ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i)
                s += x[k * plane + i];
            out[k] = Real(s / double(plane));
        }
        n.value = std::move(out);
        break;
    }
    case OpKind::kFlatten: {
        const TensorT& x = in(0);
        if (x.rank() < 1)
            shape_error(id, "flatten needs a batch axis");
        n.value = TensorT({x.extent(0), x.size() / x.extent(0)}, x.storage());
        break;
    }
    case OpKind::kSoftmax:
    case OpKind::kLogSoftmax: {
        const TensorT& x = in(0);
        if (x.rank() != 2)
            shape_error(id, "softmax needs [n,k]");
        TensorT out(x.shape());
        log_softmax_rows<Real>(x.data(), x.extent(0), x.extent(1), 1.0, out.data());
        if (n.kind == OpKind::kSoftmax)
            for (Real& v : out.data())
                v = std::exp(v);
        n.value = std::move(out);
        break;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
        const TensorT& x = in(0);
        double s = 0.0;
        for (Real v : x.data())
            s += v;
        if (n.kind == OpKind::kMean)
            s /= double(x.size());
        n.scalar = s;
        n.value = TensorT::scalar(Real(s));
        break;
    }
    case OpKind::kSoftCrossEntropy: {
        const TensorT& z = in(0);
        const TensorT& t = in(1);
        if (z.rank() != 2 || t.shape() != z.shape())
            shape_error(id, "soft_cross_entropy needs logits and target of equal [n,k] shape");
        const std::size_t rows = z.extent(0), cols = z.extent(1);
        n.saved_aux.resize(z.size());
        log_softmax_rows<Real>(z.data(), rows, cols, 1.0, n.saved_aux);
        double loss = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i)
            if (t[i] != 0)
                loss -= double(t[i]) * double(n.saved_aux[i]);
        loss /= double(rows);
        n.scalar = loss;
        n.value = TensorT::scalar(Real(loss));
        break;
    }
    case OpKind::kDistillKL: {
        const TensorT& s = in(0);
        const TensorT& t = in(1);
        if (s.rank() != 2 || t.shape() != s.shape())
            shape_error(id, "distill_kl needs student and teacher logits of equal [n,k] shape");
        const std::size_t rows = s.extent(0), cols = s.extent(1);
        const double inv_tau = 1.0 / n.distill.tau;
        std::vector<Real> log_p(s.size()), log_q(t.size());
        log_softmax_rows<Real>(s.data(), rows, cols, inv_tau, log_p);
        log_softmax_rows<Real>(t.data(), rows, cols, inv_tau, log_q);
        double kl = 0.0;
        n.saved.resize(s.size());
        n.saved_aux.resize(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double q = std::exp(double(log_q[i]));
            n.saved[i] = Real(std::exp(double(log_p[i])));
            n.saved_aux[i] = Real(q);
            if (q > 0)
                kl += q * (double(log_q[i]) - double(log_p[i]));
        }
        const double loss = n.distill.scale * kl / double(rows);
        n.scalar = loss;
        n.value = TensorT::scalar(Real(loss));
        break;
    }
    case OpKind::kInput:
    case OpKind::kParameter:
        break;
    }
}

template <typename Real>
void BasicGraph<Real>::backward()
{
    if (!forward_done_)
        throw ValidationError("backward requested before forward");
    const NodeId r = root();
    if (nodes_[r].value.size() != 1)
        throw ValidationError("loss root '" + nodes_[r].name + "' is not scalar");

    for (NodeId id = 0; id <= r; ++id) {
        Node& n = nodes_[id];
        if (active_[id] && n.needs_grad)
            n.adjoint.assign(n.value.size(), Real(0));
        else
            n.adjoint.clear();
    }
    nodes_[r].adjoint[0] = Real(1);

    for (NodeId id = r + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (!active_[id] || !n.needs_grad || n.kind == OpKind::kInput || n.kind == OpKind::kParameter)
            continue;
        backward_node(id);
    }

    for (NodeId id : params_) {
        Node& n = nodes_[id];
        if (!n.trainable)
            continue;
        auto g = n.value.grad();
        if (id <= r && active_[id])
            std::copy(n.adjoint.begin(), n.adjoint.end(), g.begin());
        else
            std::fill(g.begin(), g.end(), Real(0));
    }
}

template <typename Real>
void BasicGraph<Real>::backward_node(NodeId id)
{
    Node& n = nodes_[id];
    const std::vector<Real>& dy = n.adjoint;
    auto in_node = [&](std::size_t i) -> Node& { return nodes_[n.inputs[i]]; };
    auto wants = [&](std::size_t i) { return in_node(i).needs_grad; };

    switch (n.kind) {
    case OpKind::kAdd:
        for (std::size_t k = 0; k < 2; ++k)
            if (wants(k)) {
                auto& g = in_node(k).adjoint;
                for (std::size_t i = 0; i < dy.size(); ++i)
                    g[i] += dy[i];
            }
        break;
    case OpKind::kMul: {
        const TensorT& a = in_node(0).value;
        const TensorT& b = in_node(1).value;
        if (wants(0)) {
            auto& g = in_node(0).adjoint;
            for (std::size_t i = 0; i < dy.size(); ++i)
                g[i] += dy[i] * b[i];
        }
        if (wants(1)) {
            auto& g = in_node(1).adjoint;
            for (std::size_t i = 0; i < dy.size(); ++i)
                g[i] += dy[i] * a[i];
        }
        break;
    }
    case OpKind::kMatMul: {
        const TensorT& a = in_node(0).value;
        const TensorT& b = in_node(1).value;
        const std::size_t rows = a.extent(0), inner = a.extent(1), cols = b.extent(1);
        ConstMatMap<Real> dmat(dy.data(), rows, cols);
        if (wants(0))
            MatMap<Real>(in_node(0).adjoint.data(), rows, inner).noalias() +=
                dmat * ConstMatMap<Real>(b.data().data(), inner, cols).transpose();
        if (wants(1))
            MatMap<Real>(in_node(1).adjoint.data(), inner, cols).noalias() +=
                ConstMatMap<Real>(a.data().data(), rows, inner).transpose() * dmat;
        break;
    }
    case OpKind::kAddBias: {
        if (wants(0)) {
            auto& g = in_node(0).adjoint;
            for (std::size_t i = 0; i < dy.size(); ++i)
                g[i] += dy[i];
        }
        if (wants(1)) {
            auto& g = in_node(1).adjoint;
            const std::size_t m = g.size();
            for (std::size_t i = 0; i < dy.size(); ++i)
                g[i % m] += dy[i];
        }
        break;
    }
    case OpKind::kConv2d: {
        const TensorT& x = in_node(0).value;
        const TensorT& w = in_node(1).value;
        const std::size_t batch = x.extent(0), ch = x.extent(1), h = x.extent(2), wd = x.extent(3);
        const std::size_t oc = w.extent(0), kh = w.extent(2), kw = w.extent(3);
        const std::size_t s = n.conv.stride, p = n.conv.pad;
        const std::size_t oh = n.value.extent(2), ow = n.value.extent(3);
        const std::size_t plane = oh * ow;
        const std::size_t rows = ch * kh * kw;
        const std::size_t cols = batch * plane;

        RowMatrix<Real> dmat(oc, cols);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < oc; ++o)
                std::copy_n(dy.data() + (b * oc + o) * plane, plane, dmat.data() + o * cols + b * plane);

        if (wants(1))
            MatMap<Real>(in_node(1).adjoint.data(), oc, rows).noalias() +=
                dmat * ConstMatMap<Real>(n.saved.data(), rows, cols).transpose();
        if (n.inputs.size() == 3 && wants(2)) {
            auto& g = in_node(2).adjoint;
            for (std::size_t o = 0; o < oc; ++o)
                g[o] += dmat.row(o).sum();
        }
        if (wants(0)) {
            RowMatrix<Real> dcols = ConstMatMap<Real>(w.data().data(), oc, rows).transpose() * dmat;
            auto& g = in_node(0).adjoint;
            for (std::size_t c = 0; c < ch; ++c)
                for (std::size_t ki = 0; ki < kh; ++ki)
                    for (std::size_t kj = 0; kj < kw; ++kj) {
                        const Real* row = dcols.data() + ((c * kh + ki) * kw + kj) * cols;
                        for (std::size_t b = 0; b < batch; ++b) {
                            Real* gp = g.data() + (b * ch + c) * h * wd;
                            for (std::size_t r = 0; r < oh; ++r) {
                                const std::ptrdiff_t ih = std::ptrdiff_t(r * s + ki) - std::ptrdiff_t(p);
                                if (ih < 0 || ih >= std::ptrdiff_t(h))
                                    continue;
                                const Real* src = row + b * plane + r * ow;
                                for (std::size_t q = 0; q < ow; ++q) {
                                    const std::ptrdiff_t iw = std::ptrdiff_t(q * s + kj) - std::ptrdiff_t(p);
                                    if (iw >= 0 && iw < std::ptrdiff_t(wd))
                                        gp[ih * std::ptrdiff_t(wd) + iw] += src[q];
                                }
                            }
                        }
                    }
        }
        break;
    }
    case OpKind::kBatchNorm: {
        const TensorT& x = in_node(0).value;
        const TensorT& gamma = in_node(1).value;
        const std::size_t batch = x.extent(0), ch = x.extent(1);
        const std::size_t plane = x.rank() == 4 ? x.extent(2) * x.extent(3) : 1;
        const double count = double(batch * plane);
        for (std::size_t c = 0; c < ch; ++c) {
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t k = (b * ch + c) * plane + i;
                    sum_dy += dy[k];
                    sum_dy_xh += double(dy[k]) * double(n.saved[k]);
                }
            if (wants(1))
                in_node(1).adjoint[c] += Real(sum_dy_xh);
            if (wants(2))
                in_node(2).adjoint[c] += Real(sum_dy);
            if (!wants(0))
                continue;
            auto& g = in_node(0).adjoint;
            const double scale = double(gamma[c]) * double(n.saved_aux[c]);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t k = (b * ch + c) * plane + i;
                    if (n.batch_stats)
                        g[k] += Real(scale * (double(dy[k]) - sum_dy / count - double(n.saved[k]) * sum_dy_xh / count));
                    else
                        g[k] += Real(scale * double(dy[k]));
                }
        }
        break;
    }
    case OpKind::kRelu:
    case OpKind::kSwish:
    case OpKind::kMish: {
        if (!wants(0))
            break;
        const TensorT& x = in_node(0).value;
        auto& g = in_node(0).adjoint;
        for (std::size_t i = 0; i < dy.size(); ++i) {
            const Real v = x[i];
            Real d;
            switch (n.kind) {
            case OpKind::kRelu: d = v > 0 ? Real(1) : Real(0); break;
            case OpKind::kSwish: {
                const Real sg = sigmoid(v);
                d = sg + v * sg * (Real(1) - sg);
                break;
            }
            default: {
                const Real t = std::tanh(softplus(v));
                d = t + v * (Real(1) - t * t) * sigmoid(v);
                break;
            }
            }
            g[i] += dy[i] * d;
        }
        break;
    }
    case OpKind::kGlobalAvgPool: {
        if (!wants(0))
            break;
        const TensorT& x = in_node(0).value;
        const std::size_t plane = x.extent(2) * x.extent(3);
        auto& g = in_node(0).adjoint;
        const Real inv = Real(1) / Real(plane);
        for (std::size_t k = 0; k < dy.size(); ++k)
            for (std::size_t i = 0; i < plane; ++i)
                g[k * plane + i] += dy[k] * inv;
        break;
    }
    case OpKind::kFlatten:
        if (wants(0)) {
            auto& g = in_node(0).adjoint;
            for (std::size_t i = 0; i < dy.size(); ++i)
                g[i] += dy[i];
        }
        break;
    case OpKind::kSoftmax:
    case OpKind::kLogSoftmax: {
        if (!wants(0))
            break;
        const std::size_t rows = n.value.extent(0), cols = n.value.extent(1);
        auto& g = in_node(0).adjoint;
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* y = n.value.data().data() + r * cols;
            const Real* d = dy.data() + r * cols;
            double acc = 0.0;
            if (n.kind == OpKind::kSoftmax) {
                for (std::size_t k = 0; k < cols; ++k)
                    acc += double(d[k]) * double(y[k]);
                for (std::size_t k = 0; k < cols; ++k)
                    g[r * cols + k] += Real(double(y[k]) * (double(d[k]) - acc));
            } else {
                for (std::size_t k = 0; k < cols; ++k)
                    acc += d[k];
                for (std::size_t k = 0; k < cols; ++k)
                    g[r * cols + k] += Real(double(d[k]) - std::exp(double(y[k])) * acc);
            }
        }
        break;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
        if (!wants(0))
            break;
        auto& g = in_node(0).adjoint;
        const Real d = n.kind == OpKind::kMean ? dy[0] / Real(g.size()) : dy[0];
        for (Real& v : g)
            v += d;
        break;
    }
    case OpKind::kSoftCrossEntropy: {
        const TensorT& t = in_node(1).value;
        const std::size_t rows = t.extent(0), cols = t.extent(1);
        const double scale = double(dy[0]) / double(rows);
        if (wants(0)) {
            auto& g = in_node(0).adjoint;
            for (std::size_t r = 0; r < rows; ++r) {
                double tsum = 0.0;
                for (std::size_t k = 0; k < cols; ++k)
                    tsum += t[r * cols + k];
                for (std::size_t k = 0; k < cols; ++k) {
                    const std::size_t i = r * cols + k;
                    g[i] += Real(scale * (std::exp(double(n.saved_aux[i])) * tsum - double(t[i])));
                }
            }
        }
        if (wants(1)) {
            auto& g = in_node(1).adjoint;
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += Real(-scale * double(n.saved_aux[i]));
        }
        break;
    }
    case OpKind::kDistillKL: {
        if (!wants(0))
            break;
        const std::size_t rows = n.value.size() ? in_node(0).value.extent(0) : 0;
        const double scale = double(dy[0]) * n.distill.scale / (double(rows) * n.distill.tau);
        auto& g = in_node(0).adjoint;
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += Real(scale * (double(n.saved[i]) - double(n.saved_aux[i])));
        break;
    }
    case OpKind::kInput:
    case OpKind::kParameter:
        break;
    }
}

template class BasicGraph<float>;
template class BasicGraph<double>;

} // namespace ltlab

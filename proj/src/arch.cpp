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

#include "ltlab/arch.hpp"

#include <algorithm>
#include <set>

#include "ltlab/error.hpp"
#include "ltlab/graph.hpp"

namespace ltlab {

std::string_view to_string(ActivationKind kind)
{
    switch (kind) {
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kSwish: return "swish";
    case ActivationKind::kMish: return "mish";
    }
    return "relu";
}

ActivationKind parse_activation(std::string_view text)
{
    if (text == "relu")
        return ActivationKind::kRelu;
    if (text == "swish")
        return ActivationKind::kSwish;
    if (text == "mish")
        return ActivationKind::kMish;
    throw ValidationError("unknown activation kind '" + std::string(text) + "' (expected relu|swish|mish)");
}

std::string_view to_string(LayerKind kind)
{
    switch (kind) {
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kDense: return "dense";
    case LayerKind::kActivation: return "activation";
    case LayerKind::kResidualAdd: return "residual_add";
    case LayerKind::kGlobalAvgPool: return "pool";
    case LayerKind::kFlatten: return "flatten";
    }
    return "activation";
}

LayerKind parse_layer_kind(std::string_view text)
{
    for (LayerKind k : {LayerKind::kConv2d, LayerKind::kBatchNorm, LayerKind::kDense, LayerKind::kActivation,
                        LayerKind::kResidualAdd, LayerKind::kGlobalAvgPool, LayerKind::kFlatten})
        if (to_string(k) == text)
            return k;
    throw ValidationError("unknown layer kind '" + std::string(text) + "'");
}

namespace {

LayerDesc conv(std::string name, std::size_t out, std::size_t kernel, std::size_t stride, std::string block,
               std::vector<std::string> inputs = {})
{
    LayerDesc d;
    d.kind = LayerKind::kConv2d;
    d.name = std::move(name);
    d.out = out;
    d.kernel = kernel;
    d.stride = stride;
    d.pad = kernel / 2;
    d.block = std::move(block);
    d.inputs = std::move(inputs);
    return d;
}

LayerDesc simple(LayerKind kind, std::string name, std::string block = {}, std::vector<std::string> inputs = {})
{
    LayerDesc d;
    d.kind = kind;
    d.name = std::move(name);
    d.block = std::move(block);
    d.inputs = std::move(inputs);
    return d;
}

LayerDesc dense(std::string name, std::size_t out)
{
    LayerDesc d;
    d.kind = LayerKind::kDense;
    d.name = std::move(name);
    d.out = out;
    d.bias = true;
    return d;
}

} // namespace

ArchSpec mlp_300_100(Shape input_shape, std::size_t num_classes)
{
    ArchSpec s;
    s.name = "mlp-300-100";
    s.input_shape = std::move(input_shape);
    s.num_classes = num_classes;
    s.layers = {
        simple(LayerKind::kFlatten, "flatten"),
        dense("fc1", 300),
        simple(LayerKind::kActivation, "act1"),
        dense("fc2", 100),
        simple(LayerKind::kActivation, "act2"),
        dense("head", num_classes),
    };
    return s;
}

ArchSpec tiny_mlp(Shape input_shape, std::size_t hidden, std::size_t num_classes)
{
    ArchSpec s;
    s.name = "tiny-mlp";
    s.input_shape = std::move(input_shape);
    s.num_classes = num_classes;
    s.activation = ActivationKind::kSwish;
    s.layers = {
        simple(LayerKind::kFlatten, "flatten"),
        dense("fc1", hidden),
        simple(LayerKind::kActivation, "act1"),
        dense("head", num_classes),
    };
    return s;
}

ArchSpec mini_resnet8(Shape input_shape, std::size_t num_classes)
{
    ArchSpec s;
    s.name = "miniresnet8";
    s.input_shape = std::move(input_shape);
    s.num_classes = num_classes;
    auto& L = s.layers;
    L.push_back(conv("stem.conv", 16, 3, 1, {}));
    L.push_back(simple(LayerKind::kBatchNorm, "stem.bn"));
    L.push_back(simple(LayerKind::kActivation, "stem.act"));

    std::string prev = "stem.act";
    const std::size_t widths[] = {16, 32, 64};
    std::size_t in_width = 16;
    for (int b = 0; b < 3; ++b) {
        const std::string p = "b" + std::to_string(b + 1);
        const std::size_t w = widths[b];
        const std::size_t stride = b == 0 ? 1 : 2;
        L.push_back(conv(p + ".conv1", w, 3, stride, p, {prev}));
        L.push_back(simple(LayerKind::kBatchNorm, p + ".bn1", p));
        L.push_back(simple(LayerKind::kActivation, p + ".act1", p));
        L.push_back(conv(p + ".conv2", w, 3, 1, p));
        L.push_back(simple(LayerKind::kBatchNorm, p + ".bn2", p));
        std::string shortcut = prev;
        if (stride != 1 || in_width != w) {
            L.push_back(conv(p + ".proj", w, 1, stride, p, {prev}));
            L.push_back(simple(LayerKind::kBatchNorm, p + ".proj_bn", p));
            shortcut = p + ".proj_bn";
        }
        L.push_back(simple(LayerKind::kResidualAdd, p + ".add", p, {p + ".bn2", shortcut}));
        L.push_back(simple(LayerKind::kActivation, p + ".act2", p));
        prev = p + ".act2";
        in_width = w;
    }
    L.push_back(simple(LayerKind::kGlobalAvgPool, "pool"));
    L.push_back(dense("head", num_classes));
    return normalized(s);
}

ArchSpec preset_arch(std::string_view name, Shape input_shape, std::size_t num_classes)
{
    if (name == "mlp-300-100")
        return normalized(mlp_300_100(std::move(input_shape), num_classes));
    if (name == "miniresnet8")
        return mini_resnet8(std::move(input_shape), num_classes);
    if (name == "tiny-mlp")
        return normalized(tiny_mlp(std::move(input_shape), 6, num_classes));
    throw ValidationError("unknown architecture '" + std::string(name)
                          + "' (expected mlp-300-100|miniresnet8|tiny-mlp)");
}

ArchSpec normalized(const ArchSpec& spec)
{
    ArchSpec out = spec;
    for (std::size_t i = 0; i < out.layers.size(); ++i)
        if (out.layers[i].inputs.empty())
            out.layers[i].inputs = {i == 0 ? std::string("input") : out.layers[i - 1].name};
    return out;
}

std::map<std::string, Shape> infer_shapes(const ArchSpec& raw)
{
    const ArchSpec spec = normalized(raw);
    std::map<std::string, Shape> shapes;
    std::map<std::string, const LayerDesc*> by_name;
    shapes["input"] = spec.input_shape;
    if (spec.input_shape.empty())
        throw ValidationError("architecture '" + spec.name + "' has no input shape");

    for (const LayerDesc& d : spec.layers) {
        if (d.name.empty() || d.name == "input" || shapes.contains(d.name))
            throw ValidationError("layer name '" + d.name + "' is empty or duplicated");
        std::vector<Shape> in;
        for (const std::string& src : d.inputs) {
            auto it = shapes.find(src);
            if (it == shapes.end())
                throw ValidationError("layer '" + d.name + "' reads unknown or later layer '" + src + "'");
            in.push_back(it->second);
        }
        const std::size_t want = d.kind == LayerKind::kResidualAdd ? 2 : 1;
        if (in.size() != want)
            throw ValidationError("layer '" + d.name + "' expects " + std::to_string(want) + " input(s)");
        const Shape& x = in[0];
        Shape y;
        switch (d.kind) {
        case LayerKind::kConv2d:
            if (x.size() != 3 || d.kernel == 0 || d.out == 0 || d.stride == 0)
                throw ValidationError("conv '" + d.name + "' needs a [C,H,W] input, got " + shape_to_string(x));
            if (x[1] + 2 * d.pad < d.kernel || x[2] + 2 * d.pad < d.kernel)
                throw ValidationError("conv '" + d.name + "' kernel exceeds padded input " + shape_to_string(x));
            y = {d.out, conv_out_extent(x[1], d.kernel, d.stride, d.pad),
                 conv_out_extent(x[2], d.kernel, d.stride, d.pad)};
            break;
        case LayerKind::kBatchNorm: {
            if (x.size() != 3 && x.size() != 1)
                throw ValidationError("batchnorm '" + d.name + "' needs [C,H,W] or [F], got " + shape_to_string(x));
            auto producer = by_name.find(d.inputs[0]);
            if (producer != by_name.end() && producer->second->kind == LayerKind::kConv2d && producer->second->bias)
                throw ValidationError("conv '" + producer->second->name + "' feeds batchnorm '" + d.name
                                      + "' and must not carry a bias");
            y = x;
            break;
        }
        case LayerKind::kDense:
            if (x.size() != 1 || d.out == 0)
                throw ValidationError("dense '" + d.name + "' needs a flat input, got " + shape_to_string(x));
            y = {d.out};
            break;
        case LayerKind::kActivation:
            y = x;
            break;
        case LayerKind::kResidualAdd:
            if (in[0] != in[1])
                throw ValidationError("residual_add '" + d.name + "' joins incompatible shapes "
                                      + shape_to_string(in[0]) + " ('" + d.inputs[0] + "') and "
                                      + shape_to_string(in[1]) + " ('" + d.inputs[1] + "')");
            y = x;
            break;
        case LayerKind::kGlobalAvgPool:
            if (x.size() != 3)
                throw ValidationError("pool '" + d.name + "' needs [C,H,W], got " + shape_to_string(x));
            y = {x[0]};
            break;
        case LayerKind::kFlatten:
            y = {shape_volume(x)};
            break;
        }
        shapes[d.name] = y;
        by_name[d.name] = &d;
    }
    if (spec.layers.empty() || shapes[spec.layers.back().name] != Shape{spec.num_classes})
        throw ValidationError("architecture '" + spec.name + "' must end in a [" + std::to_string(spec.num_classes)
                              + "] output");
    return shapes;
}

ArchSpec inject_skips(const ArchSpec& raw)
{
    ArchSpec spec = normalized(raw);
    const auto shapes = infer_shapes(spec);

    std::vector<LayerDesc> out;
    std::map<std::string, std::string> renamed;
    auto rename = [&](std::vector<std::string>& inputs) {
        for (std::string& s : inputs)
            if (auto it = renamed.find(s); it != renamed.end())
                s = it->second;
    };

    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        LayerDesc d = spec.layers[i];
        rename(d.inputs);
        out.push_back(d);
        if (d.kind != LayerKind::kBatchNorm)
            continue;
        // Find the conv feeding this BN in the original spec.
        const auto conv_it = std::find_if(spec.layers.begin(), spec.layers.end(),
                                          [&](const LayerDesc& c) { return c.name == spec.layers[i].inputs[0]; });
        if (conv_it == spec.layers.end() || conv_it->kind != LayerKind::kConv2d || conv_it->kernel != 3
            || conv_it->block.empty())
            continue;
        const std::string& conv_input = conv_it->inputs[0];
        if (shapes.at(conv_input) != shapes.at(d.name))
            continue;
        LayerDesc skip;
        skip.kind = LayerKind::kResidualAdd;
        skip.name = d.name + ".skip";
        std::vector<std::string> src = {conv_input};
        rename(src);
        skip.inputs = {d.name, src[0]};
        skip.block = conv_it->block;
        skip.injected = true;
        renamed[d.name] = skip.name;
        out.push_back(std::move(skip));
    }
    spec.layers = std::move(out);
    spec.injected_skips = true;
    infer_shapes(spec);
    return spec;
}

nlohmann::json to_json(const ArchSpec& spec)
{
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerDesc& d : spec.layers) {
        nlohmann::json l = {{"kind", to_string(d.kind)}, {"name", d.name}, {"inputs", d.inputs}};
        if (d.kind == LayerKind::kConv2d || d.kind == LayerKind::kDense) {
            l["out"] = d.out;
            l["bias"] = d.bias;
        }
        if (d.kind == LayerKind::kConv2d) {
            l["kernel"] = d.kernel;
            l["stride"] = d.stride;
            l["pad"] = d.pad;
        }
        if (!d.block.empty())
            l["block"] = d.block;
        if (d.injected)
            l["injected"] = true;
        layers.push_back(std::move(l));
    }
    return {{"name", spec.name},
            {"input_shape", spec.input_shape},
            {"num_classes", spec.num_classes},
            {"activation", to_string(spec.activation)},
            {"injected_skips", spec.injected_skips},
            {"layers", std::move(layers)}};
}

ArchSpec arch_from_json(const nlohmann::json& j)
{
    try {
        ArchSpec s;
        s.name = j.at("name").get<std::string>();
        s.input_shape = j.at("input_shape").get<Shape>();
        s.num_classes = j.at("num_classes").get<std::size_t>();
        s.activation = parse_activation(j.at("activation").get<std::string>());
        s.injected_skips = j.at("injected_skips").get<bool>();
        for (const auto& l : j.at("layers")) {
            LayerDesc d;
            d.kind = parse_layer_kind(l.at("kind").get<std::string>());
            d.name = l.at("name").get<std::string>();
            d.inputs = l.at("inputs").get<std::vector<std::string>>();
            d.out = l.value("out", std::size_t{0});
            d.bias = l.value("bias", false);
            d.kernel = l.value("kernel", std::size_t{0});
            d.stride = l.value("stride", std::size_t{1});
            d.pad = l.value("pad", std::size_t{0});
            d.block = l.value("block", std::string{});
            d.injected = l.value("injected", false);
            s.layers.push_back(std::move(d));
        }
        infer_shapes(s);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed architecture description: ") + e.what());
    }
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed)
{
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t arch_hash(const ArchSpec& spec)
{
    return fnv1a64(to_json(normalized(spec)).dump());
}

} // namespace ltlab

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

#ifndef LTLAB_ARCH_HPP
#define LTLAB_ARCH_HPP

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ltlab/tensor.hpp"

namespace ltlab {

enum class ActivationKind { kRelu, kSwish, kMish };

std::string_view to_string(ActivationKind kind);
ActivationKind parse_activation(std::string_view text);

enum class LayerKind { kConv2d, kBatchNorm, kDense, kActivation, kResidualAdd, kGlobalAvgPool, kFlatten };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);

/// One node of a declarative architecture.
///
/// `inputs` names the producing layers; an empty list means "the previous
/// layer" (the first layer reads the network input). A residual add takes
/// {main path, skip source}. Activation layers use the spec-wide kind so
/// swapping activations is a one-field edit.
struct LayerDesc {
    LayerKind kind = LayerKind::kActivation;
    std::string name;
    std::vector<std::string> inputs;
    std::size_t out = 0; // conv output channels / dense output features
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;
    bool bias = false;
    std::string block;     // residual block tag; empty outside blocks
    bool injected = false; // residual add introduced by inject_skips

    friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

struct ArchSpec {
    std::string name;
    Shape input_shape; // per-sample: {C,H,W} or {D}
    std::size_t num_classes = 0;
    std::vector<LayerDesc> layers;
    ActivationKind activation = ActivationKind::kRelu;
    bool injected_skips = false;

    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// Fully connected 300-100 network over a flattened input.
ArchSpec mlp_300_100(Shape input_shape, std::size_t num_classes);

/// Stem 3x3 conv, three residual blocks of two 3x3 conv+BN (widths
/// 16/32/64, stride 2 entering blocks 2 and 3 with 1x1 projections),
/// global average pool, dense head.
ArchSpec mini_resnet8(Shape input_shape, std::size_t num_classes);

/// Small MLP used by the curvature oracle tests (hidden width `hidden`).
ArchSpec tiny_mlp(Shape input_shape, std::size_t hidden, std::size_t num_classes);

ArchSpec preset_arch(std::string_view name, Shape input_shape, std::size_t num_classes);

/// Rewrites implicit "previous layer" inputs into explicit names.
ArchSpec normalized(const ArchSpec& spec);

/// Per-sample output shape of every layer (keyed by layer name). Validates
/// the structural invariants and throws ValidationError on violation.
std::map<std::string, Shape> infer_shapes(const ArchSpec& spec);

/// Adds an identity residual edge around every shape-preserving 3x3 conv
/// inside a residual block, landing after its batch norm and before the
/// activation. Convs that change shape are left alone.
ArchSpec inject_skips(const ArchSpec& spec);

nlohmann::json to_json(const ArchSpec& spec);
ArchSpec arch_from_json(const nlohmann::json& j);

/// FNV-1a over the canonical JSON text.
std::uint64_t arch_hash(const ArchSpec& spec);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

} // namespace ltlab

#endif // LTLAB_ARCH_HPP

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

#include "ltlab/checkpoint.hpp"

#include <cstdio>

#include "ltlab/error.hpp"

namespace ltlab {

namespace {

constexpr std::string_view kMeta = "meta.json";
constexpr std::string_view kMaskSuffix = ".mask";

bool ends_with(std::string_view s, std::string_view suffix)
{
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_bn_stat(std::string_view s)
{
    return ends_with(s, ".running_mean") || ends_with(s, ".running_var");
}

} // namespace

Checkpoint capture(const Model& model, std::uint64_t seed, int epoch, const Mask* mask)
{
    Checkpoint c;
    c.arch = model.spec();
    c.seed = seed;
    c.epoch = epoch;
    c.params = model.parameters();
    c.bn_state = model.bn_state();
    if (mask)
        c.mask = *mask;
    return c;
}

Model restore(const Checkpoint& c)
{
    Model m = Model::build(c.arch, c.seed);
    m.load_parameters(c.params);
    m.load_bn_state(c.bn_state);
    if (c.mask)
        apply_mask(m, *c.mask);
    return m;
}

Archive to_archive(const Checkpoint& c)
{
    Archive a;
    for (const auto& [name, t] : c.params)
        a.emplace(name, t);
    for (const auto& [name, t] : c.bn_state)
        a.emplace(name, t);
    if (c.mask)
        for (const auto& [name, m] : c.mask->blocks) {
            ByteTensor b(m.shape());
            for (std::size_t i = 0; i < m.size(); ++i)
                b[i] = m[i] != 0.0f ? 1 : 0;
            a.emplace(name + std::string(kMaskSuffix), std::move(b));
        }
    nlohmann::json meta = {{"epoch", c.epoch},
                           {"seed", c.seed},
                           {"arch", to_json(c.arch)},
                           {"arch_hash", hex64(arch_hash(c.arch))},
                           {"extra", c.extra}};
    const std::string text = meta.dump();
    a.emplace(std::string(kMeta), ByteTensor({text.size()}, std::vector<std::uint8_t>(text.begin(), text.end())));
    return a;
}

Checkpoint checkpoint_from_archive(const Archive& a)
{
    const ByteTensor& raw = archive_bytes(a, std::string(kMeta));
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(std::string(raw.data().begin(), raw.data().end()));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint meta.json is not valid JSON: ") + e.what());
    }
    Checkpoint c;
    try {
        c.epoch = meta.at("epoch").get<int>();
        c.seed = meta.at("seed").get<std::uint64_t>();
        c.arch = arch_from_json(meta.at("arch"));
        if (meta.contains("extra"))
            c.extra = meta.at("extra");
        if (meta.at("arch_hash").get<std::string>() != hex64(arch_hash(c.arch)))
            throw ValidationError("checkpoint architecture hash does not match its stored architecture");
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint meta.json: ") + e.what());
    }
    Mask mask;
    for (const auto& [name, value] : a) {
        if (name == kMeta)
            continue;
        if (ends_with(name, kMaskSuffix)) {
            const auto* b = std::get_if<ByteTensor>(&value);
            if (!b)
                throw ValidationError("mask entry '" + name + "' must be u8");
            Tensor m(b->shape());
            for (std::size_t i = 0; i < b->size(); ++i) {
                if ((*b)[i] > 1)
                    throw ValidationError("mask entry '" + name + "' holds a value other than 0/1");
                m[i] = float((*b)[i]);
            }
            mask.blocks.emplace(name.substr(0, name.size() - kMaskSuffix.size()), std::move(m));
            continue;
        }
        const auto* t = std::get_if<Tensor>(&value);
        if (!t)
            throw ValidationError("checkpoint entry '" + name + "' must be f32");
        (is_bn_stat(name) ? c.bn_state : c.params).emplace(name, *t);
    }
    if (!mask.blocks.empty())
        c.mask = std::move(mask);
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c)
{
    save_archive(path, to_archive(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    return checkpoint_from_archive(load_archive(path));
}

std::uint64_t checkpoint_hash(const Checkpoint& c)
{
    return fnv1a64(serialize_archive(to_archive(c)));
}

std::string hex64(std::uint64_t value)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

} // namespace ltlab

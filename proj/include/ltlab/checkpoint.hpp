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

#ifndef LTLAB_CHECKPOINT_HPP
#define LTLAB_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"

#include "ltlab/archive.hpp"
#include "ltlab/arch.hpp"
#include "ltlab/model.hpp"
#include "ltlab/pruning.hpp"

namespace ltlab {

/// Self-contained model snapshot. In the archive, parameters keep their
/// plain names, running statistics are "<bn>.running_mean/var", masks are
/// "<block>.mask" (u8) and "meta.json" (u8, UTF-8) holds epoch, seed, the
/// architecture and its hash plus free-form extras.
struct Checkpoint {
    ArchSpec arch;
    std::uint64_t seed = 0;
    int epoch = 0;
    TensorMap params;
    TensorMap bn_state;
    std::optional<Mask> mask;
    nlohmann::json extra = nlohmann::json::object();
};

Checkpoint capture(const Model& model, std::uint64_t seed, int epoch, const Mask* mask = nullptr);

/// Rebuilds the model and loads weights and running statistics.
Model restore(const Checkpoint& checkpoint);

Archive to_archive(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_archive(const Archive& archive);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 of the serialized archive bytes.
std::uint64_t checkpoint_hash(const Checkpoint& checkpoint);
std::string hex64(std::uint64_t value);

} // namespace ltlab

#endif // LTLAB_CHECKPOINT_HPP

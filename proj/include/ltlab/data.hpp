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

#ifndef LTLAB_DATA_HPP
#define LTLAB_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "ltlab/tensor.hpp"

namespace ltlab {

/// Labelled samples: images [N, ...sample shape], integer labels.
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    Shape sample_shape() const;
    /// Gathers the given rows into a new dataset.
    Dataset subset(std::span<const std::size_t> rows) const;
};

struct DataSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Seeded random split: round(ratio * N) rows go to the first part.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double ratio, std::uint64_t seed);

/// Loads the bundled 8x8 digit set ("train.images" [N,1,8,8] f32 in [0,1],
/// "train.labels" u8, and the same for "test.*").
std::pair<Dataset, Dataset> load_digits(const std::filesystem::path& path);

/// Isotropic Gaussian clusters around seeded random centres.
Dataset make_blobs(std::size_t samples, std::size_t dim, std::size_t classes, double spread, std::uint64_t seed);

/// Model input/target pair.
struct Batch {
    Tensor inputs;
    Tensor targets; // [N, K] class probabilities
};

} // namespace ltlab

#endif // LTLAB_DATA_HPP

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

#include "ltlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ltlab/archive.hpp"
#include "ltlab/error.hpp"

namespace ltlab {

Shape Dataset::sample_shape() const
{
    return Shape(images.shape().begin() + 1, images.shape().end());
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const
{
    if (rows.empty())
        throw ValidationError("cannot take an empty subset");
    const std::size_t stride = images.size() / images.extent(0);
    Shape shape = images.shape();
    shape[0] = rows.size();
    std::vector<float> data(rows.size() * stride);
    Dataset out;
    out.num_classes = num_classes;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= size())
            throw ValidationError("subset row out of range");
        std::copy_n(images.data().begin() + std::ptrdiff_t(rows[k] * stride), stride,
                    data.begin() + std::ptrdiff_t(k * stride));
        out.labels.push_back(labels[rows[k]]);
    }
    out.images = Tensor(std::move(shape), std::move(data));
    return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double ratio, std::uint64_t seed)
{
    if (!(ratio > 0.0 && ratio < 1.0))
        throw ValidationError("split ratio must lie in (0,1)");
    if (data.size() < 2)
        throw ValidationError("dataset too small to split");
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto first = std::size_t(std::llround(ratio * double(data.size())));
    first = std::clamp<std::size_t>(first, 1, data.size() - 1);
    const std::span<const std::size_t> all(idx);
    return {data.subset(all.first(first)), data.subset(all.subspan(first))};
}

namespace {

Dataset read_split(const Archive& a, const std::string& prefix)
{
    Dataset d;
    d.images = archive_tensor(a, prefix + ".images");
    const ByteTensor& labels = archive_bytes(a, prefix + ".labels");
    if (d.images.rank() < 2 || labels.rank() != 1 || labels.extent(0) != d.images.extent(0))
        throw ValidationError("dataset split '" + prefix + "' has inconsistent image/label extents");
    int max_label = 0;
    for (std::uint8_t v : labels.data()) {
        d.labels.push_back(v);
        max_label = std::max<int>(max_label, v);
    }
    d.num_classes = std::size_t(max_label) + 1;
    return d;
}

} // namespace

std::pair<Dataset, Dataset> load_digits(const std::filesystem::path& path)
{
    const Archive a = load_archive(path);
    Dataset train = read_split(a, "train");
    Dataset test = read_split(a, "test");
    const std::size_t k = std::max(train.num_classes, test.num_classes);
    train.num_classes = test.num_classes = k;
    return {std::move(train), std::move(test)};
}

Dataset make_blobs(std::size_t samples, std::size_t dim, std::size_t classes, double spread, std::uint64_t seed)
{
    if (samples == 0 || dim == 0 || classes < 2)
        throw ValidationError("blobs need samples > 0, dim > 0 and at least two classes");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> centres(classes * dim);
    for (double& c : centres)
        c = 2.0 * normal(rng);
    Dataset d;
    d.num_classes = classes;
    std::vector<float> data(samples * dim);
    for (std::size_t i = 0; i < samples; ++i) {
        const std::size_t c = i % classes;
        d.labels.push_back(int(c));
        for (std::size_t j = 0; j < dim; ++j)
            data[i * dim + j] = float(centres[c * dim + j] + spread * normal(rng));
    }
    d.images = Tensor({samples, dim}, std::move(data));
    return d;
}

} // namespace ltlab

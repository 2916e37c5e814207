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

#ifndef LTLAB_TENSOR_HPP
#define LTLAB_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltlab/error.hpp"

namespace ltlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

/// Dense row-major array with an optional same-shape gradient slot.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T{})
        : shape_(std::move(shape)), data_(shape_volume(shape_), fill)
    {
        check_extents();
    }

    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data))
    {
        check_extents();
        if (data_.size() != shape_volume(shape_))
            throw ValidationError("tensor data length " + std::to_string(data_.size())
                                  + " does not match shape " + shape_to_string(shape_));
    }

    static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T item() const
    {
        if (data_.size() != 1)
            throw ValidationError("item() on tensor of shape " + shape_to_string(shape_));
        return data_[0];
    }

    bool has_grad() const noexcept { return grad_.has_value(); }

    /// Allocates a zeroed gradient slot if none exists.
    std::span<T> grad()
    {
        if (!grad_)
            grad_.emplace(data_.size(), T{});
        return *grad_;
    }
    std::span<const T> grad() const
    {
        if (!grad_)
            throw ValidationError("tensor has no gradient");
        return *grad_;
    }
    void clear_grad() noexcept { grad_.reset(); }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    /// Same data, new shape of equal volume.
    BasicTensor reshaped(Shape shape) const
    {
        BasicTensor out(std::move(shape), data_);
        return out;
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b)
    {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_extents() const
    {
        for (std::size_t e : shape_)
            if (e == 0)
                throw ValidationError("tensor extents must be positive, got " + shape_to_string(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
    std::optional<std::vector<T>> grad_;
};

using Tensor = BasicTensor<float>;
using ByteTensor = BasicTensor<std::uint8_t>;

} // namespace ltlab

#endif // LTLAB_TENSOR_HPP

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "epl/error.hpp"

namespace epl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& dims);
std::string shape_str(const Shape& dims);

/// Dense row-major float32 tensor. Data length always equals the product of dims.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape dims, float fill = 0.0f);
    Tensor(Shape dims, std::vector<float> data);

    static Tensor zeros(Shape dims) { return Tensor(std::move(dims), 0.0f); }

    const Shape& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
    std::size_t numel() const noexcept { return data_.size(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    float* ptr() noexcept { return data_.data(); }
    const float* ptr() const noexcept { return data_.data(); }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    /// Same data under new dims; element count must match.
    Tensor reshaped(Shape dims) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape dims_;
    std::vector<float> data_;
};

/// Named parameter tensors, iterated in lexicographic id order.
using ParamMap = std::map<std::string, Tensor>;

/// Throws ShapeError unless both maps have identical ids and dims.
void require_congruent(const ParamMap& a, const ParamMap& b, const std::string& what);

}  // namespace epl

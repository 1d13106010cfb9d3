// SPDX-License-Identifier: Apache-2.0
#include "epl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace epl {

std::size_t shape_numel(const Shape& dims)
{
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& dims)
{
    std::string out = "(";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(dims[i]);
    }
    return out + ")";
}

Tensor::Tensor(Shape dims, float fill) : dims_(std::move(dims))
{
    for (auto d : dims_) {
        if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(dims_));
    }
    data_.assign(shape_numel(dims_), fill);
}

Tensor::Tensor(Shape dims, std::vector<float> data) : dims_(std::move(dims)), data_(std::move(data))
{
    for (auto d : dims_) {
        if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(dims_));
    }
    if (data_.size() != shape_numel(dims_)) {
        throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                         " does not match dims " + shape_str(dims_));
    }
}

Tensor Tensor::reshaped(Shape dims) const
{
    if (shape_numel(dims) != numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(dims_) + " as " + shape_str(dims));
    }
    return Tensor(std::move(dims), data_);
}

bool Tensor::all_finite() const noexcept
{
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void require_congruent(const ParamMap& a, const ParamMap& b, const std::string& what)
{
    if (a.size() != b.size()) {
        throw ShapeError(what + ": parameter count " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    auto ib = b.begin();
    for (const auto& [id, t] : a) {
        if (ib->first != id) throw ShapeError(what + ": parameter id " + id + " vs " + ib->first);
        if (ib->second.dims() != t.dims()) {
            throw ShapeError(what + ": " + id + " dims " + shape_str(t.dims()) + " vs " +
                             shape_str(ib->second.dims()));
        }
        ++ib;
    }
}

}  // namespace epl

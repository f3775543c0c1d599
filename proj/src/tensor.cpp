// SPDX-License-Identifier: Apache-2.0
#include "biflow/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>

namespace biflow {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {
    for (auto d : shape_)
        if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_)
        if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape_));
    if (numel(shape_) != data_.size())
        throw ShapeError("shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
}

Tensor Tensor::from(std::initializer_list<std::size_t> shape, std::initializer_list<double> values) {
    return Tensor(Shape(shape), std::vector<double>(values));
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

bool Tensor::all_finite() const {
    // An all-ones exponent marks inf or NaN; the integer test vectorizes.
    constexpr std::uint64_t exp_mask = 0x7FF0000000000000ULL;
    std::uint64_t bad = 0;
    for (double v : data_) bad |= (std::bit_cast<std::uint64_t>(v) & exp_mask) == exp_mask;
    return bad == 0;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (numel(shape) != data_.size())
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor operator+(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor operator*(double s, const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.values()) v *= s;
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw ShapeError("max_abs_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double rms(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v * v;
    return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace biflow

#include "lord/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "lord/errors.hpp"

namespace lord {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size()) {
        throw DimensionError("tensor shape " + shape_str(shape_) + " holds " + std::to_string(numel(shape_)) +
                             " values, got " + std::to_string(data_.size()));
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

std::size_t Tensor::rows() const {
    if (shape_.size() <= 1) return 1;
    return numel(Shape(shape_.begin(), shape_.end() - 1));
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    requires_grad_ = on;
    if (!on) grad_.reset();
    return *this;
}

std::span<const double> Tensor::grad() const {
    if (!grad_) throw ValidationError("tensor " + shape_str(shape_) + " has no gradient");
    return *grad_;
}

std::span<double> Tensor::grad_mut() {
    if (!grad_) grad_.emplace(data_.size(), 0.0);
    return *grad_;
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (g.size() != data_.size()) {
        throw DimensionError("gradient of size " + std::to_string(g.size()) + " for tensor " + shape_str(shape_));
    }
    if (!grad_) {
        grad_.emplace(g.begin(), g.end());
        return;
    }
    auto& dst = *grad_;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

void Tensor::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace lord

#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lord {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles with an optional gradient accumulator.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t rank() const { return shape_.size(); }
    // 2-D view helpers; a 1-D tensor is treated as a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double item() const;

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool on);

    bool has_grad() const { return grad_.has_value(); }
    std::span<const double> grad() const;
    std::span<double> grad_mut();
    // Adds into the gradient buffer, allocating it on first use.
    void accumulate_grad(std::span<const double> g);
    void zero_grad();
    void clear_grad() { grad_.reset(); }

    Tensor detached() const { return Tensor(shape_, data_); }
    Tensor reshaped(Shape shape) const;

    bool all_finite() const;

private:
    Shape shape_;
    std::vector<double> data_;
    bool requires_grad_ = false;
    std::optional<std::vector<double>> grad_;
};

bool bit_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace lord

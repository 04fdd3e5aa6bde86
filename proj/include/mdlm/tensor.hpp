#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mdlm {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float64 array. Model parameters are Tensors with
// requires_grad set; backward() accumulates into grad() until zero_grad().
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return values_.size(); }
    std::size_t rows() const { return shape_.empty() ? 0 : (shape_.size() == 1 ? 1 : shape_.front()); }
    // Trailing extent for 2-D use; 1-D tensors count as a single row.
    std::size_t cols() const;

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool on);

    bool has_grad() const { return grad_.has_value(); }
    std::span<const double> grad() const;
    // Adds `delta` (same size) into the gradient slot, allocating it on first use.
    void accumulate_grad(std::span<const double> delta);
    void zero_grad() { grad_.reset(); }

    bool all_finite() const;
    bool bit_equal(const Tensor& other) const;

private:
    Shape shape_;
    std::vector<double> values_;
    bool requires_grad_ = false;
    std::optional<std::vector<double>> grad_;
};

}  // namespace mdlm

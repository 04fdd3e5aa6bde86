#include "mdlm/tensor.hpp"

#include "mdlm/errors.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

namespace mdlm {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

static void check_shape(const Shape& shape) {
    if (shape.empty()) {
        throw DimensionError("tensor shape must have at least one dimension");
    }
    for (auto d : shape) {
        if (d == 0) {
            throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
        }
    }
}

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
    check_shape(shape_);
    values_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
    check_shape(shape_);
    if (shape_size(shape_) != values_.size()) {
        throw DimensionError("shape " + shape_string(shape_) + " does not match " +
                             std::to_string(values_.size()) + " values");
    }
}

std::size_t Tensor::cols() const {
    if (shape_.size() < 2) {
        return shape_.empty() ? 0 : shape_[0];
    }
    return shape_size(shape_) / shape_[0];
}

void Tensor::set_requires_grad(bool on) {
    requires_grad_ = on;
    if (!on) {
        grad_.reset();
    }
}

std::span<const double> Tensor::grad() const {
    if (!grad_) {
        throw ContractError("tensor has no gradient");
    }
    return *grad_;
}

void Tensor::accumulate_grad(std::span<const double> delta) {
    if (delta.size() != values_.size()) {
        throw DimensionError("gradient size mismatch");
    }
    if (!grad_) {
        grad_.emplace(values_.size(), 0.0);
    }
    auto& g = *grad_;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += delta[i];
    }
}

bool Tensor::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
    return shape_ == other.shape_ && values_.size() == other.values_.size() &&
           (values_.empty() ||
            std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0);
}

}  // namespace mdlm

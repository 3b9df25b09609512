#include "fcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "fcl/errors.hpp"

namespace fcl {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, bool requires_grad) : s_(std::make_shared<TensorStorage>()) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    s_->data.assign(shape_numel(shape), real{0});
    s_->shape = std::move(shape);
    s_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<real> data, bool requires_grad)
    : s_(std::make_shared<TensorStorage>()) {
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " elements");
    }
    s_->shape = std::move(shape);
    s_->data = std::move(data);
    s_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape shape, real value) {
    Tensor t(std::move(shape));
    std::fill(t.s_->data.begin(), t.s_->data.end(), value);
    return t;
}

real Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return s_->data[0];
}

std::span<real> Tensor::ensure_grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), real{0});
    return s_->grad;
}

Tensor Tensor::clone() const {
    if (!s_) return {};
    Tensor t;
    t.s_ = std::make_shared<TensorStorage>();
    t.s_->shape = s_->shape;
    t.s_->data = s_->data;
    t.s_->requires_grad = s_->requires_grad;
    return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(real)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
    }
    return m;
}

}  // namespace fcl

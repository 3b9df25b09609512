#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fcl {

// Storage precision. The float64 build exists only so that finite-difference
// gradient checks are meaningful; production code paths use float32.
#ifdef FCL_REAL_F64
using real = double;
#else
using real = float;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorStorage {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;  // empty until something writes a gradient
    bool requires_grad = false;
};

// Shared handle to a dense row-major tensor. Copies alias the same storage;
// use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<real> data, bool requires_grad = false);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, real value);
    static Tensor scalar(real value) { return full({1}, value); }

    bool defined() const noexcept { return static_cast<bool>(s_); }
    const Shape& shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
    std::size_t numel() const { return s_->data.size(); }

    std::span<real> data() { return s_->data; }
    std::span<const real> data() const { return s_->data; }
    real* ptr() { return s_->data.data(); }
    const real* ptr() const { return s_->data.data(); }
    real item() const;

    bool requires_grad() const noexcept { return s_ && s_->requires_grad; }
    void set_requires_grad(bool on) { s_->requires_grad = on; }
    bool has_grad() const noexcept { return s_ && !s_->grad.empty(); }
    std::span<real> grad() { return s_->grad; }
    std::span<const real> grad() const { return s_->grad; }
    // Allocates a zero gradient buffer if none exists. Const because it
    // writes through the shared storage, not the handle.
    std::span<real> ensure_grad() const;
    void clear_grad() { s_->grad.clear(); }

    Tensor clone() const;
    const std::shared_ptr<TensorStorage>& storage() const noexcept { return s_; }

private:
    std::shared_ptr<TensorStorage> s_;
};

// Exact element-wise equality of shape and data.
bool bit_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace fcl

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fcl/tensor.hpp"

namespace fcl {

struct SgdConfig {
    double learning_rate = 0.1;
    double weight_decay = 0.0;
    std::optional<double> grad_clip_norm = 1.0;

    void validate() const;
};

struct TrainableParam {
    Tensor tensor;
    bool weight_decay = true;
};

// w <- w - lr * (g + wd * w) for decayed params, w <- w - lr * g otherwise.
// With grad_clip_norm set, gradients are first rescaled so their global L2
// norm is at most that value. Gradients are zeroed afterward. Returns the
// pre-clip global gradient norm.
double sgd_step(std::span<TrainableParam> params, const SgdConfig& cfg);
// Every param is decayed.
double sgd_step(std::span<Tensor> params, const SgdConfig& cfg);

}  // namespace fcl

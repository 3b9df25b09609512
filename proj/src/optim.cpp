#include "fcl/optim.hpp"

#include <cmath>

#include "fcl/errors.hpp"

namespace fcl {

void SgdConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("sgd: learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("sgd: weight_decay must be non-negative");
    if (grad_clip_norm && !(*grad_clip_norm > 0.0)) throw ConfigError("sgd: grad_clip_norm must be positive");
}

double sgd_step(std::span<TrainableParam> params, const SgdConfig& cfg) {
    cfg.validate();
    double sq = 0.0;
    for (auto& p : params) {
        if (!p.tensor.has_grad()) throw ContractError("sgd_step: parameter " + shape_str(p.tensor.shape()) + " has no gradient");
        for (real g : p.tensor.grad()) sq += double(g) * double(g);
    }
    const double norm = std::sqrt(sq);
    double g_scale = 1.0;
    if (cfg.grad_clip_norm && norm > *cfg.grad_clip_norm) g_scale = *cfg.grad_clip_norm / norm;
    for (auto& p : params) {
        auto w = p.tensor.data();
        auto g = p.tensor.grad();
        const double wd = p.weight_decay ? cfg.weight_decay : 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double step = g_scale * double(g[i]) + wd * double(w[i]);
            w[i] = static_cast<real>(double(w[i]) - cfg.learning_rate * step);
        }
        std::fill(g.begin(), g.end(), real{0});
    }
    return norm;
}

double sgd_step(std::span<Tensor> params, const SgdConfig& cfg) {
    std::vector<TrainableParam> wrapped;
    wrapped.reserve(params.size());
    for (auto& t : params) wrapped.push_back({t, true});
    return sgd_step(wrapped, cfg);
}

}  // namespace fcl

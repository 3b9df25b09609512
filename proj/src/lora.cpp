#include "fcl/lora.hpp"

#include <cmath>

#include "fcl/errors.hpp"
#include "fcl/kernels.hpp"
#include "fcl/seed.hpp"

namespace fcl {

LoraAdapter LoraAdapter::clone() const {
    LoraAdapter out;
    out.config = config;
    out.trained_on = trained_on;
    out.base_version = base_version;
    for (const auto& [name, f] : factors) out.factors.emplace(name, LoraFactors{f.a.clone(), f.b.clone()});
    return out;
}

std::vector<Tensor> LoraAdapter::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [name, f] : factors) {
        out.push_back(f.a);
        out.push_back(f.b);
    }
    return out;
}

DeltaSet DeltaSet::clone() const {
    DeltaSet out;
    for (const auto& [name, t] : layers) out.layers.emplace(name, t.clone());
    return out;
}

double DeltaSet::frobenius_norm() const {
    double sq = 0.0;
    for (const auto& [name, t] : layers) {
        for (real v : t.data()) sq += double(v) * double(v);
    }
    return std::sqrt(sq);
}

std::size_t DeltaSet::numel() const {
    std::size_t n = 0;
    for (const auto& [name, t] : layers) n += t.numel();
    return n;
}

LoraConfig resolve_lora_config(const KnowledgeBase& kb, LoraConfig cfg) {
    if (cfg.rank <= 0) throw ConfigError("lora: rank must be positive");
    if (!(cfg.alpha > 0.0)) throw ConfigError("lora: alpha must be positive");
    if (!(cfg.init_sigma > 0.0)) throw ConfigError("lora: init_sigma must be positive");
    if (cfg.target_layers.empty()) cfg.target_layers = adapter_target_layers(kb.config);
    for (const auto& name : cfg.target_layers) {
        if (!kb.params.contains(name) || kb.params.at(name).rank() != 2) {
            throw AdapterCompatibilityError("lora target '" + name + "' is not a weight matrix of the model");
        }
        const Tensor& w = kb.params.at(name);
        const auto limit = std::min(w.dim(0), w.dim(1)) / 4;
        if (std::size_t(cfg.rank) > limit) {
            throw ConfigError("lora: rank " + std::to_string(cfg.rank) + " exceeds min(d_in, d_out)/4 = " +
                              std::to_string(limit) + " for '" + name + "'");
        }
    }
    return cfg;
}

LoraAdapter init_adapter(const KnowledgeBase& kb, const LoraConfig& cfg, std::string dataset_id,
                         std::uint64_t seed) {
    LoraAdapter ad;
    ad.config = resolve_lora_config(kb, cfg);
    ad.trained_on = std::move(dataset_id);
    ad.base_version = kb.version;
    const auto r = std::size_t(ad.config.rank);
    for (const auto& name : ad.config.target_layers) {
        const Tensor& w = kb.params.at(name);
        Tensor a({w.dim(0), r}, true);
        Rng rng(derive_seed(seed, name));
        std::normal_distribution<double> dist(0.0, ad.config.init_sigma);
        for (auto& v : a.data()) v = static_cast<real>(dist(rng));
        Tensor b({r, w.dim(1)}, true);
        ad.factors.emplace(name, LoraFactors{std::move(a), std::move(b)});
    }
    return ad;
}

DeltaSet compose_delta(const LoraAdapter& adapter) {
    DeltaSet out;
    const double s = adapter.config.scaling();
    for (const auto& [name, f] : adapter.factors) {
        const std::size_t m = f.a.dim(0), r = f.a.dim(1), n = f.b.dim(1);
        if (f.b.dim(0) != r) {
            throw DimensionError("compose_delta: factors " + shape_str(f.a.shape()) + " x " + shape_str(f.b.shape()));
        }
        Tensor dw({m, n});
        kernels::gemm(kernels::Trans::no, kernels::Trans::no, {m, n, r}, f.a.ptr(), f.b.ptr(), dw.ptr(), false);
        for (auto& v : dw.data()) v = static_cast<real>(v * s);
        out.layers.emplace(name, std::move(dw));
    }
    return out;
}

namespace {

void require_compatible(const DeltaSet& x, const DeltaSet& y, const char* op) {
    if (x.layers.size() != y.layers.size()) {
        throw DimensionError(std::string(op) + ": delta sets have different layer counts");
    }
    for (const auto& [name, t] : x.layers) {
        auto it = y.layers.find(name);
        if (it == y.layers.end()) throw DimensionError(std::string(op) + ": layer '" + name + "' missing");
        if (it->second.shape() != t.shape()) {
            throw DimensionError(std::string(op) + ": layer '" + name + "' " + shape_str(t.shape()) + " vs " +
                                 shape_str(it->second.shape()));
        }
    }
}

}  // namespace

DeltaSet zero_delta_like(const DeltaSet& like) {
    DeltaSet out;
    for (const auto& [name, t] : like.layers) out.layers.emplace(name, Tensor(t.shape()));
    return out;
}

DeltaSet add_deltas(const DeltaSet& x, const DeltaSet& y) {
    DeltaSet out = x.clone();
    add_scaled_inplace(out, y, 1.0);
    return out;
}

DeltaSet scale_delta(const DeltaSet& delta, double c) {
    DeltaSet out = delta.clone();
    for (auto& [name, t] : out.layers) {
        for (auto& v : t.data()) v = static_cast<real>(v * c);
    }
    return out;
}

void add_scaled_inplace(DeltaSet& x, const DeltaSet& y, double c) {
    require_compatible(x, y, "add_deltas");
    for (auto& [name, t] : x.layers) {
        const Tensor& o = y.layers.at(name);
        for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<real>(t.data()[i] + c * o.data()[i]);
    }
}

DeltaSet average_deltas(std::span<const DeltaSet> deltas) {
    if (deltas.empty()) throw ContractError("average_deltas: empty list");
    for (const auto& d : deltas) require_compatible(deltas.front(), d, "average_deltas");
    DeltaSet out = zero_delta_like(deltas.front());
    const double inv = 1.0 / double(deltas.size());
    for (auto& [name, t] : out.layers) {
        std::vector<double> acc(t.numel(), 0.0);
        for (const auto& d : deltas) {
            const Tensor& src = d.layers.at(name);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src.data()[i];
        }
        for (std::size_t i = 0; i < acc.size(); ++i) t.data()[i] = static_cast<real>(acc[i] * inv);
    }
    return out;
}

double max_abs_diff(const DeltaSet& x, const DeltaSet& y) {
    require_compatible(x, y, "max_abs_diff");
    double m = 0.0;
    for (const auto& [name, t] : x.layers) m = std::max(m, max_abs_diff(t, y.layers.at(name)));
    return m;
}

KnowledgeBase lora_merge(const KnowledgeBase& kb, const DeltaSet& delta) {
    for (const auto& [name, dw] : delta.layers) {
        if (!kb.params.contains(name)) throw DimensionError("lora_merge: model has no layer '" + name + "'");
        if (kb.params.at(name).shape() != dw.shape()) {
            throw DimensionError("lora_merge: layer '" + name + "' " + shape_str(kb.params.at(name).shape()) +
                                 " vs delta " + shape_str(dw.shape()));
        }
    }
    KnowledgeBase out = kb;
    for (const auto& [name, dw] : delta.layers) {
        Tensor& w = out.params.at(name);
        for (std::size_t i = 0; i < w.numel(); ++i) w.data()[i] += dw.data()[i];
    }
    out.version = kb.version + 1;
    return out;
}

double sparsity(const DeltaSet& delta, double eps) {
    if (!(eps > 0.0)) throw ContractError("sparsity: eps must be positive");
    std::size_t small = 0, total = 0;
    for (const auto& [name, t] : delta.layers) {
        for (real v : t.data()) small += std::abs(double(v)) < eps ? 1 : 0;
        total += t.numel();
    }
    return total ? double(small) / double(total) : 1.0;
}

double relative_sparsity(const DeltaSet& delta, const KnowledgeBase& kb, double rel_eps) {
    if (!(rel_eps > 0.0)) throw ContractError("relative_sparsity: eps must be positive");
    std::size_t small = 0, total = 0;
    for (const auto& [name, t] : delta.layers) {
        const Tensor& w = kb.params.at(name);
        double sq = 0.0;
        for (real v : w.data()) sq += double(v) * double(v);
        const double threshold = rel_eps * std::sqrt(sq / double(w.numel()));
        for (real v : t.data()) small += std::abs(double(v)) < threshold ? 1 : 0;
        total += t.numel();
    }
    return total ? double(small) / double(total) : 1.0;
}

LoraAdapter average_factors(std::span<const LoraAdapter> adapters) {
    if (adapters.empty()) throw ContractError("average_factors: empty list");
    LoraAdapter out = adapters.front().clone();
    out.trained_on = "factor-average";
    const double inv = 1.0 / double(adapters.size());
    for (auto& [name, f] : out.factors) {
        for (Tensor* dst : {&f.a, &f.b}) {
            const bool is_a = dst == &f.a;
            std::vector<double> acc(dst->numel(), 0.0);
            for (const auto& ad : adapters) {
                auto it = ad.factors.find(name);
                if (it == ad.factors.end()) throw DimensionError("average_factors: layer '" + name + "' missing");
                const Tensor& src = is_a ? it->second.a : it->second.b;
                if (src.shape() != dst->shape()) throw DimensionError("average_factors: shape mismatch on '" + name + "'");
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src.data()[i];
            }
            for (std::size_t i = 0; i < acc.size(); ++i) dst->data()[i] = static_cast<real>(acc[i] * inv);
        }
    }
    return out;
}

}  // namespace fcl

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fcl/model.hpp"
#include "fcl/tensor.hpp"

namespace fcl {

struct LoraConfig {
    int rank = 4;
    double alpha = 8.0;
    double init_sigma = 0.02;
    std::vector<std::string> target_layers;  // empty: adapter_target_layers()

    double scaling() const { return alpha / rank; }
    bool operator==(const LoraConfig&) const = default;
};

struct LoraFactors {
    Tensor a;  // [d_out x r]
    Tensor b;  // [r x d_in]
};

struct LoraAdapter {
    LoraConfig config;
    std::map<std::string, LoraFactors> factors;
    std::string trained_on;
    std::uint64_t base_version = 0;

    LoraAdapter clone() const;
    std::vector<Tensor> parameters() const;
};

// Dense per-layer weight updates. Closed under addition and scaling.
struct DeltaSet {
    std::map<std::string, Tensor> layers;

    DeltaSet clone() const;
    double frobenius_norm() const;
    std::size_t numel() const;
};

// Resolves empty target_layers against the model and checks the rank bound
// r <= min(d_in, d_out) / 4 for every target.
LoraConfig resolve_lora_config(const KnowledgeBase& kb, LoraConfig cfg);

// A ~ N(0, sigma^2), B = 0, so the adapted model starts exactly at kb.
LoraAdapter init_adapter(const KnowledgeBase& kb, const LoraConfig& cfg, std::string dataset_id,
                         std::uint64_t seed);

// Delta W = (alpha / r) A B per layer.
DeltaSet compose_delta(const LoraAdapter& adapter);

DeltaSet zero_delta_like(const DeltaSet& like);
DeltaSet add_deltas(const DeltaSet& x, const DeltaSet& y);
DeltaSet scale_delta(const DeltaSet& delta, double c);
// In-place x += c * y.
void add_scaled_inplace(DeltaSet& x, const DeltaSet& y, double c = 1.0);
// Entry-wise mean with double accumulation.
DeltaSet average_deltas(std::span<const DeltaSet> deltas);
double max_abs_diff(const DeltaSet& x, const DeltaSet& y);

// New knowledge base with W <- W + Delta W on every listed layer and
// version + 1. kb itself is untouched.
KnowledgeBase lora_merge(const KnowledgeBase& kb, const DeltaSet& delta);

// Fraction of entries with |w| < eps over all layers.
double sparsity(const DeltaSet& delta, double eps);
// Same count with a per-layer threshold of rel_eps * RMS(base weight).
double relative_sparsity(const DeltaSet& delta, const KnowledgeBase& kb, double rel_eps = 1e-3);

// Diagnostic only: averages A and B separately. The product of averaged
// factors is not the average of products.
LoraAdapter average_factors(std::span<const LoraAdapter> adapters);

}  // namespace fcl

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fcl/optim.hpp"
#include "fcl/tensor.hpp"

namespace fcl {

struct LoraAdapter;

struct ModelConfig {
    int vocab_in = 256;
    int vocab_out = 192;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int d_ff = 128;
    int max_seq_len = 32;
    std::uint64_t seed = 0;
    // Learned absolute positional embeddings. Without them attention is
    // permutation-equivariant.
    bool positional = true;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Named parameters with value semantics: copying a ParamMap deep-copies every
// tensor. Iteration order is lexicographic by name.
class ParamMap {
public:
    ParamMap() = default;
    ParamMap(const ParamMap& other);
    ParamMap& operator=(const ParamMap& other);
    ParamMap(ParamMap&&) noexcept = default;
    ParamMap& operator=(ParamMap&&) noexcept = default;

    void insert(const std::string& name, Tensor t) { map_[name] = std::move(t); }
    bool contains(const std::string& name) const { return map_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    std::size_t size() const { return map_.size(); }

    auto begin() const { return map_.begin(); }
    auto end() const { return map_.end(); }
    auto begin() { return map_.begin(); }
    auto end() { return map_.end(); }

private:
    std::map<std::string, Tensor> map_;
};

// Base model parameters theta plus the number of merges applied to them.
struct KnowledgeBase {
    ModelConfig config;
    ParamMap params;
    std::uint64_t version = 0;
};

KnowledgeBase init_model(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);
std::size_t parameter_count(const KnowledgeBase& kb);

// Default adapter targets: the four attention projections of every block.
std::vector<std::string> adapter_target_layers(const ModelConfig& cfg);
// W_q and W_k of every block only.
std::vector<std::string> query_key_layers(const ModelConfig& cfg);

// Base parameters as an optimizer group; rank-2 weights are decayed, gains and
// biases are not. Sets requires_grad on every tensor.
std::vector<TrainableParam> trainable_params(KnowledgeBase& kb);

// FNV-1a over names, shapes and raw payload bytes; used for freeze checks.
std::uint64_t params_hash(const ParamMap& params);

struct TokenBatch {
    std::span<const std::int32_t> tokens;  // batch * seq_len ids, row-major
    std::size_t batch = 1;
    std::size_t seq_len = 0;
};

// Logits [batch*seq_len x vocab_out]. With an adapter, each target linear
// layer computes Wx + (alpha/r) A (B x).
Tensor forward(const KnowledgeBase& kb, TokenBatch batch, const LoraAdapter* adapter = nullptr);
Tensor forward(const KnowledgeBase& kb, std::span<const std::int32_t> tokens,
               const LoraAdapter* adapter = nullptr);

// Row-wise argmax, ties toward the lowest index.
std::vector<std::int32_t> argmax_rows(const Tensor& logits);
std::vector<std::int32_t> predict(const KnowledgeBase& kb, std::span<const std::int32_t> tokens,
                                  const LoraAdapter* adapter = nullptr);

// Throws AdapterCompatibilityError unless every adapter factor pair matches a
// 2-D layer of kb.
void check_adapter_compatible(const KnowledgeBase& kb, const LoraAdapter& adapter);

}  // namespace fcl

#include "fcl/model.hpp"

#include <cmath>
#include <cstring>

#include "fcl/errors.hpp"
#include "fcl/lora.hpp"
#include "fcl/ops.hpp"
#include "fcl/seed.hpp"

namespace fcl {

void ModelConfig::validate() const {
    if (vocab_in <= 0 || vocab_out <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 ||
        max_seq_len <= 0) {
        throw ConfigError("model: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
}

ParamMap::ParamMap(const ParamMap& other) {
    for (const auto& [name, t] : other.map_) map_.emplace(name, t.clone());
}

ParamMap& ParamMap::operator=(const ParamMap& other) {
    if (this != &other) {
        ParamMap copy(other);
        map_ = std::move(copy.map_);
    }
    return *this;
}

const Tensor& ParamMap::at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw IndexError("no parameter named '" + name + "'");
    return it->second;
}

Tensor& ParamMap::at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw IndexError("no parameter named '" + name + "'");
    return it->second;
}

namespace {

std::string layer_prefix(int l) { return "layers." + std::to_string(l) + "."; }

Tensor gaussian(Shape shape, double stddev, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<real>(dist(rng));
    return t;
}

}  // namespace

KnowledgeBase init_model(const ModelConfig& cfg) {
    cfg.validate();
    KnowledgeBase kb;
    kb.config = cfg;
    const auto d = std::size_t(cfg.d_model), ff = std::size_t(cfg.d_ff);
    const double proj = 1.0 / std::sqrt(double(d));
    const double resid = proj / std::sqrt(2.0 * cfg.n_layers);
    auto add_gauss = [&](const std::string& name, Shape shape, double stddev) {
        kb.params.insert(name, gaussian(std::move(shape), stddev, derive_seed(cfg.seed, name)));
    };
    auto add_const = [&](const std::string& name, std::size_t n, real value) {
        kb.params.insert(name, Tensor::full({n}, value));
    };

    add_gauss("tok_embed", {std::size_t(cfg.vocab_in), d}, 1.0);
    if (cfg.positional) add_gauss("pos_embed", {std::size_t(cfg.max_seq_len), d}, 0.1);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto p = layer_prefix(l);
        add_const(p + "ln1.gain", d, 1);
        add_const(p + "ln1.bias", d, 0);
        for (const char* w : {"wq", "wk", "wv"}) add_gauss(p + "attn." + w, {d, d}, proj);
        add_gauss(p + "attn.wo", {d, d}, resid);
        for (const char* b : {"bq", "bk", "bv", "bo"}) add_const(p + "attn." + b, d, 0);
        add_const(p + "ln2.gain", d, 1);
        add_const(p + "ln2.bias", d, 0);
        add_gauss(p + "ff.w1", {ff, d}, proj);
        add_const(p + "ff.b1", ff, 0);
        add_gauss(p + "ff.w2", {d, ff}, resid * std::sqrt(double(d) / double(ff)));
        add_const(p + "ff.b2", d, 0);
    }
    add_const("ln_f.gain", d, 1);
    add_const("ln_f.bias", d, 0);
    add_gauss("head.w", {std::size_t(cfg.vocab_out), d}, proj);
    add_const("head.b", std::size_t(cfg.vocab_out), 0);
    return kb;
}

std::size_t parameter_count(const ModelConfig& cfg) {
    const std::size_t d = cfg.d_model, ff = cfg.d_ff;
    const std::size_t per_layer = 4 * d               // two layer norms
                                  + 4 * (d * d + d)  // q, k, v, o projections
                                  + (ff * d + ff) + (d * ff + d);
    return std::size_t(cfg.vocab_in) * d + (cfg.positional ? std::size_t(cfg.max_seq_len) * d : 0) +
           std::size_t(cfg.n_layers) * per_layer + 2 * d + std::size_t(cfg.vocab_out) * (d + 1);
}

std::size_t parameter_count(const KnowledgeBase& kb) {
    std::size_t n = 0;
    for (const auto& [name, t] : kb.params) n += t.numel();
    return n;
}

std::vector<std::string> adapter_target_layers(const ModelConfig& cfg) {
    std::vector<std::string> names;
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (const char* w : {"wq", "wk", "wv", "wo"}) names.push_back(layer_prefix(l) + "attn." + w);
    }
    return names;
}

std::vector<std::string> query_key_layers(const ModelConfig& cfg) {
    std::vector<std::string> names;
    for (int l = 0; l < cfg.n_layers; ++l) {
        names.push_back(layer_prefix(l) + "attn.wq");
        names.push_back(layer_prefix(l) + "attn.wk");
    }
    return names;
}

std::vector<TrainableParam> trainable_params(KnowledgeBase& kb) {
    std::vector<TrainableParam> out;
    for (auto& [name, t] : kb.params) {
        t.set_requires_grad(true);
        out.push_back({t, t.rank() == 2});
    }
    return out;
}

std::uint64_t params_hash(const ParamMap& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, t] : params) {
        mix(name.data(), name.size());
        for (auto d : t.shape()) mix(&d, sizeof d);
        mix(t.ptr(), t.numel() * sizeof(real));
    }
    return h;
}

void check_adapter_compatible(const KnowledgeBase& kb, const LoraAdapter& adapter) {
    if (adapter.factors.empty()) throw AdapterCompatibilityError("adapter has no factor pairs");
    for (const auto& [name, f] : adapter.factors) {
        if (!kb.params.contains(name)) {
            throw AdapterCompatibilityError("adapter targets unknown layer '" + name + "'");
        }
        const Tensor& w = kb.params.at(name);
        if (w.rank() != 2 || f.a.rank() != 2 || f.b.rank() != 2 || f.a.dim(0) != w.dim(0) ||
            f.b.dim(1) != w.dim(1) || f.a.dim(1) != f.b.dim(0)) {
            throw AdapterCompatibilityError("adapter factors " + shape_str(f.a.shape()) + " x " +
                                            shape_str(f.b.shape()) + " do not fit layer '" + name + "' " +
                                            shape_str(w.shape()));
        }
    }
}

namespace {

Tensor adapted_linear(const KnowledgeBase& kb, const std::string& wname, const std::string& bname,
                      const Tensor& x, const LoraAdapter* adapter) {
    Tensor y = linear(x, kb.params.at(wname), kb.params.at(bname));
    if (adapter) {
        auto it = adapter->factors.find(wname);
        if (it != adapter->factors.end()) {
            Tensor low = matmul_nt(matmul_nt(x, it->second.b), it->second.a);
            y = add(y, scale(low, adapter->config.scaling()));
        }
    }
    return y;
}

}  // namespace

Tensor forward(const KnowledgeBase& kb, TokenBatch batch, const LoraAdapter* adapter) {
    const auto& cfg = kb.config;
    if (batch.seq_len == 0 || batch.batch == 0 || batch.tokens.size() != batch.batch * batch.seq_len) {
        throw DimensionError("forward: " + std::to_string(batch.tokens.size()) + " tokens for batch " +
                             std::to_string(batch.batch) + " x " + std::to_string(batch.seq_len));
    }
    if (batch.seq_len > std::size_t(cfg.max_seq_len)) {
        throw IndexError("forward: sequence length " + std::to_string(batch.seq_len) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
    }
    for (auto t : batch.tokens) {
        if (t < 0 || t >= cfg.vocab_in) {
            throw IndexError("forward: token " + std::to_string(t) + " outside [0, " + std::to_string(cfg.vocab_in) + ")");
        }
    }
    if (adapter) check_adapter_compatible(kb, *adapter);

    Tensor x = embedding(kb.params.at("tok_embed"), batch.tokens);
    if (cfg.positional) {
        std::vector<std::int32_t> pos(batch.tokens.size());
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int32_t>(i % batch.seq_len);
        x = add(x, embedding(kb.params.at("pos_embed"), pos));
    }
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto p = layer_prefix(l);
        Tensor h = layer_norm(x, kb.params.at(p + "ln1.gain"), kb.params.at(p + "ln1.bias"));
        Tensor q = adapted_linear(kb, p + "attn.wq", p + "attn.bq", h, adapter);
        Tensor k = adapted_linear(kb, p + "attn.wk", p + "attn.bk", h, adapter);
        Tensor v = adapted_linear(kb, p + "attn.wv", p + "attn.bv", h, adapter);
        Tensor a = attention(q, k, v, batch.batch, batch.seq_len, std::size_t(cfg.n_heads));
        x = add(x, adapted_linear(kb, p + "attn.wo", p + "attn.bo", a, adapter));
        h = layer_norm(x, kb.params.at(p + "ln2.gain"), kb.params.at(p + "ln2.bias"));
        Tensor f = gelu(adapted_linear(kb, p + "ff.w1", p + "ff.b1", h, adapter));
        x = add(x, adapted_linear(kb, p + "ff.w2", p + "ff.b2", f, adapter));
    }
    x = layer_norm(x, kb.params.at("ln_f.gain"), kb.params.at("ln_f.bias"));
    return linear(x, kb.params.at("head.w"), kb.params.at("head.b"));
}

Tensor forward(const KnowledgeBase& kb, std::span<const std::int32_t> tokens, const LoraAdapter* adapter) {
    return forward(kb, TokenBatch{tokens, 1, tokens.size()}, adapter);
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw DimensionError("argmax_rows: expected 2-D logits, got " + shape_str(logits.shape()));
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    std::vector<std::int32_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const real* row = logits.ptr() + r * cols;
        std::size_t best = 0;
        for (std::size_t c = 1; c < cols; ++c) {
            if (row[c] > row[best]) best = c;
        }
        out[r] = static_cast<std::int32_t>(best);
    }
    return out;
}

std::vector<std::int32_t> predict(const KnowledgeBase& kb, std::span<const std::int32_t> tokens,
                                  const LoraAdapter* adapter) {
    NoGradGuard guard;
    return argmax_rows(forward(kb, tokens, adapter));
}

}  // namespace fcl

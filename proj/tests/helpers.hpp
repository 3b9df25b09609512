#pragma once

#include <random>
#include <vector>

#include "fcl/continual.hpp"
#include "fcl/lora.hpp"
#include "fcl/model.hpp"
#include "fcl/seed.hpp"
#include "fcl/taskgen.hpp"
#include "fcl/tensor.hpp"

namespace fcl::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
    Rng rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<real> v(shape_numel(shape));
    for (auto& x : v) x = real(dist(rng));
    return Tensor(std::move(shape), std::move(v));
}

inline std::vector<std::int32_t> random_tokens(std::size_t n, int vocab, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> dist(0, vocab - 1);
    std::vector<std::int32_t> out(n);
    for (auto& t : out) t = dist(rng);
    return out;
}

inline ModelConfig tiny_model(std::uint64_t seed = 7) {
    ModelConfig c;
    c.vocab_in = 40;
    c.vocab_out = 32;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 32;
    c.max_seq_len = 12;
    c.seed = seed;
    return c;
}

inline LoraConfig tiny_lora() {
    LoraConfig c;
    c.rank = 2;
    c.alpha = 4.0;
    return c;
}

// Adapter with both factors random, so its delta is non-zero.
inline LoraAdapter random_adapter(const KnowledgeBase& kb, const LoraConfig& cfg, std::uint64_t seed,
                                  double b_std = 0.05) {
    LoraAdapter ad = init_adapter(kb, cfg, "random", seed);
    std::uint64_t s = seed;
    for (auto& [name, f] : ad.factors) {
        f.b = random_tensor(f.b.shape(), derive_seed(++s, name), b_std);
    }
    return ad;
}

// A small suite that trains within seconds.
inline SuiteConfig tiny_suite(std::uint64_t seed = 5) {
    SuiteConfig c;
    c.n_languages = 4;
    c.vocab_per_lang = 8;
    c.vocab_in = 40;
    c.vocab_out = 32;
    c.seq_len = 6;
    c.pretrain_samples_per_lang = 150;
    c.test_samples = 40;
    c.stream = {{0, 1, 0.5, 0.25, 120}, {0, 2, 0.5, 0.25, 120}, {1, 2, 0.5, 0.25, 120}};
    c.seed = seed;
    return c;
}

// Six code-switch datasets over the four tiny languages.
inline SuiteConfig six_stream_suite(std::uint64_t seed = 5) {
    SuiteConfig c = tiny_suite(seed);
    c.stream = {{0, 1, 0.5, 0.25, 80}, {0, 2, 0.5, 0.25, 80}, {0, 3, 0.5, 0.25, 80},
                {1, 2, 0.5, 0.25, 80}, {1, 3, 0.5, 0.25, 80}, {2, 3, 0.5, 0.25, 80}};
    return c;
}

// Model matching the tiny suites' vocabularies and sequence length.
inline ModelConfig suite_model(std::uint64_t seed = 7) {
    ModelConfig c = tiny_model(seed);
    c.max_seq_len = 6;
    return c;
}

inline StreamSchedule tiny_schedule(std::size_t k = 3, std::size_t epochs = 2) {
    StreamSchedule s;
    s.k = k;
    s.train.epochs = epochs;
    s.train.batch_size = 16;
    s.lora = tiny_lora();
    s.seed = 11;
    return s;
}

}  // namespace fcl::test

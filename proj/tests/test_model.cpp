#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fcl/errors.hpp"
#include "fcl/lora.hpp"
#include "fcl/model.hpp"
#include "helpers.hpp"

using namespace fcl;

TEST_CASE("init_model is deterministic per seed") {
    const auto a = init_model(test::tiny_model(1));
    const auto b = init_model(test::tiny_model(1));
    const auto c = init_model(test::tiny_model(2));
    CHECK(a.version == 0);
    CHECK(params_hash(a.params) == params_hash(b.params));
    for (const auto& [name, t] : a.params) CHECK(bit_equal(t, b.params.at(name)));
    bool any_differs = false;
    for (const auto& [name, t] : a.params) any_differs |= !bit_equal(t, c.params.at(name));
    CHECK(any_differs);
}

TEST_CASE("parameter count of the default model") {
    // Hand count: embeddings 256*64 + 32*64, per block 2 norms (4*64),
    // q/k/v/o (4*(64*64+64)), feed-forward (128*64+128 + 64*128+64); final
    // norm 2*64; head 192*64+192.
    const ModelConfig cfg;
    CHECK(parameter_count(cfg) == 97984);
    CHECK(parameter_count(init_model(cfg)) == 97984);
    ModelConfig no_pos = cfg;
    no_pos.positional = false;
    CHECK(parameter_count(init_model(no_pos)) == 97984 - 32 * 64);
}

TEST_CASE("init_model rejects invalid configs") {
    ModelConfig c = test::tiny_model();
    c.n_heads = 3;
    CHECK_THROWS_AS(init_model(c), ConfigError);
    c = test::tiny_model();
    c.d_ff = 0;
    CHECK_THROWS_AS(init_model(c), ConfigError);
}

TEST_CASE("biases start at zero and adapter targets exist") {
    const auto kb = init_model(test::tiny_model());
    for (const auto& name : {"layers.0.attn.bq", "layers.1.ff.b1", "head.b"}) {
        for (auto v : kb.params.at(name).data()) CHECK(v == 0);
    }
    const auto targets = adapter_target_layers(kb.config);
    CHECK(targets.size() == 8);
    for (const auto& t : targets) CHECK(kb.params.contains(t));
    for (const auto& t : query_key_layers(kb.config)) CHECK(kb.params.contains(t));
}

TEST_CASE("forward shape, range checks and determinism") {
    const auto kb = init_model(test::tiny_model());
    const auto tokens = test::random_tokens(10, 40, 3);
    const Tensor a = forward(kb, tokens);
    const Tensor b = forward(kb, tokens);
    CHECK(a.shape() == Shape{10, 32});
    CHECK(bit_equal(a, b));
    for (auto v : a.data()) CHECK(std::isfinite(v));

    std::vector<std::int32_t> bad{1, 40};
    CHECK_THROWS_AS(forward(kb, bad), IndexError);
    std::vector<std::int32_t> neg{-1};
    CHECK_THROWS_AS(forward(kb, neg), IndexError);
    CHECK_THROWS_AS(forward(kb, test::random_tokens(13, 40, 4)), IndexError);
}

TEST_CASE("batched forward equals per-sequence forward") {
    const auto kb = init_model(test::tiny_model());
    const auto tokens = test::random_tokens(3 * 5, 40, 8);
    const Tensor batched = forward(kb, TokenBatch{tokens, 3, 5});
    for (std::size_t s = 0; s < 3; ++s) {
        const Tensor one = forward(kb, std::span(tokens).subspan(s * 5, 5));
        for (std::size_t i = 0; i < one.numel(); ++i) {
            CHECK(std::abs(one.data()[i] - batched.data()[s * 5 * 32 + i]) < 1e-5);
        }
    }
}

TEST_CASE("zero-B adapter reproduces the plain forward exactly") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto kb = init_model(test::tiny_model(seed));
        const auto ad = init_adapter(kb, test::tiny_lora(), "d", seed + 10);
        const auto tokens = test::random_tokens(9, 40, seed);
        CHECK(bit_equal(forward(kb, tokens, &ad), forward(kb, tokens)));
    }
}

TEST_CASE("adapter path and merged weights agree") {
    const auto kb = init_model(test::tiny_model());
    const auto ad = test::random_adapter(kb, test::tiny_lora(), 5, 0.2);
    const auto merged = lora_merge(kb, compose_delta(ad));
    double worst = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto tokens = test::random_tokens(8, 40, 100 + s);
        worst = std::max(worst, max_abs_diff(forward(merged, tokens), forward(kb, tokens, &ad)));
    }
    CHECK(worst > 0);  // the adapter does something
    CHECK(worst < 1e-4);
    CHECK_FALSE(bit_equal(forward(kb, test::random_tokens(8, 40, 1), &ad), forward(kb, test::random_tokens(8, 40, 1))));
}

TEST_CASE("incompatible adapters are rejected") {
    const auto kb = init_model(test::tiny_model());
    ModelConfig wider = test::tiny_model();
    wider.d_model = 32;
    const auto other = init_model(wider);
    const auto ad = init_adapter(other, test::tiny_lora(), "d", 1);
    const auto tokens = test::random_tokens(4, 40, 1);
    CHECK_THROWS_AS(forward(kb, tokens, &ad), AdapterCompatibilityError);

    auto renamed = init_adapter(kb, test::tiny_lora(), "d", 1);
    auto node = renamed.factors.extract(renamed.factors.begin());
    node.key() = "layers.9.attn.wq";
    renamed.factors.insert(std::move(node));
    CHECK_THROWS_AS(forward(kb, tokens, &renamed), AdapterCompatibilityError);
}

TEST_CASE("argmax ties break toward the lowest index") {
    Tensor logits({2, 6}, {0, 0, 3, 0, 0, 3, 1, 9, 0, 0, 0, 0});
    CHECK(argmax_rows(logits) == std::vector<std::int32_t>{2, 1});
    Tensor onehot({3, 4}, {0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 1});
    CHECK(argmax_rows(onehot) == std::vector<std::int32_t>{2, 0, 3});
}

TEST_CASE("predictions of an untrained model stay in range") {
    const auto kb = init_model(test::tiny_model());
    for (auto p : predict(kb, test::random_tokens(12, 40, 77))) {
        CHECK(p >= 0);
        CHECK(p < 32);
    }
}

TEST_CASE("without positional embeddings attention is permutation-equivariant") {
    ModelConfig c = test::tiny_model();
    c.positional = false;
    const auto kb = init_model(c);
    const auto tokens = test::random_tokens(7, 40, 9);
    std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
    std::vector<std::int32_t> permuted(7);
    for (std::size_t i = 0; i < 7; ++i) permuted[i] = tokens[perm[i]];
    const Tensor a = forward(kb, tokens), b = forward(kb, permuted);
    for (std::size_t i = 0; i < 7; ++i) {
        for (std::size_t v = 0; v < 32; ++v) {
            CHECK(std::abs(b.data()[i * 32 + v] - a.data()[perm[i] * 32 + v]) < 1e-5);
        }
    }
}

TEST_CASE("param maps copy deeply") {
    auto kb = init_model(test::tiny_model());
    KnowledgeBase copy = kb;
    copy.params.at("head.b").data()[0] = 42;
    CHECK(kb.params.at("head.b").data()[0] == 0);
    CHECK_THROWS_AS(kb.params.at("missing"), IndexError);
}

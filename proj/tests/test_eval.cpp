#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fcl/errors.hpp"
#include "fcl/eval.hpp"
#include "fcl/lora.hpp"
#include "helpers.hpp"

using namespace fcl;

namespace {

// Plain recursion over the three edit operations.
std::size_t brute_distance(const std::vector<std::int32_t>& a, std::size_t i, const std::vector<std::int32_t>& b,
                           std::size_t j) {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    const std::size_t sub = brute_distance(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
    const std::size_t del = brute_distance(a, i + 1, b, j) + 1;
    const std::size_t ins = brute_distance(a, i, b, j + 1) + 1;
    return std::min({sub, del, ins});
}

std::vector<std::int32_t> random_seq(Rng& rng, std::size_t max_len, int alphabet) {
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<int> sym(0, alphabet - 1);
    std::vector<std::int32_t> s(len(rng));
    for (auto& x : s) x = sym(rng);
    return s;
}

Dataset labelled(const TaskSuite& suite, std::size_t l) { return suite.backward[l]; }

}  // namespace

TEST_CASE("token_error_rate examples") {
    std::vector<std::int32_t> abc{1, 2, 3}, ac{1, 3}, a{1}, bcd{2, 3, 4}, empty;
    CHECK(token_error_rate(abc, abc) == 0.0);
    CHECK(token_error_rate(abc, ac) == doctest::Approx(1.0 / 3.0));
    CHECK(token_error_rate(a, bcd) == 3.0);
    CHECK(token_error_rate(abc, empty) == 1.0);
    CHECK_THROWS_AS(token_error_rate(empty, abc), ContractError);
}

TEST_CASE("edit_distance agrees with brute-force recursion") {
    Rng rng(2024);
    for (int trial = 0; trial < 400; ++trial) {
        const auto x = random_seq(rng, 6, 3), y = random_seq(rng, 6, 3), z = random_seq(rng, 6, 3);
        const auto dxy = edit_distance(x, y);
        CHECK(dxy == brute_distance(x, 0, y, 0));
        CHECK(dxy == edit_distance(y, x));
        CHECK(edit_distance(x, z) <= dxy + edit_distance(y, z));
        CHECK(edit_distance(x, x) == 0);
    }
}

TEST_CASE("metrics matrix bookkeeping") {
    MetricsMatrix m({"a", "b", "c"});
    m.add_row("r1", std::vector<double>{0.1, 0.2, 0.6});
    m.add_row("r2", std::vector<std::optional<double>>{0.5, std::nullopt, 0.25});
    CHECK(*m.avg("r1") == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(std::abs(*m.avg("r2") - 0.375) < 1e-9);
    CHECK_FALSE(m.at("r2", "b").has_value());
    CHECK(*m.at("r1", "c") == 0.6);
    CHECK_THROWS_AS(m.add_row("r1", std::vector<double>{0, 0, 0}), ContractError);
    CHECK_THROWS_AS(m.add_row("r3", std::vector<double>{0, 0}), DimensionError);
    CHECK_THROWS_AS(m.at("r9", "a"), IndexError);
    CHECK_THROWS_AS(m.at("r1", "z"), IndexError);
}

TEST_CASE("relative improvement examples") {
    CHECK(*relative_improvement(0.3, 0.3) == 0.0);
    CHECK_FALSE(relative_improvement(0.0, 0.1).has_value());
    // (39.4 - 28.7) / 39.4
    CHECK(*relative_improvement(0.394, 0.287) == doctest::Approx(0.27157360406).epsilon(1e-9));
    CHECK(*relative_improvement(0.2, 0.3) < 0);
}

TEST_CASE("transfer scores on a hand 2x2 matrix") {
    MetricsMatrix fwd({"t1", "t2"}), bwd({"m1", "m2"});
    fwd.add_row("base", std::vector<double>{0.4, 0.2});
    fwd.add_row("mid", std::vector<double>{0.1, 0.3});
    fwd.add_row("final", std::vector<double>{0.2, 0.1});
    bwd.add_row("base", std::vector<double>{0.0, 0.1});
    bwd.add_row("mid", std::vector<double>{0.2, 0.1});
    bwd.add_row("final", std::vector<double>{0.1, 0.1});
    const auto s = transfer_scores(fwd, bwd, "base", "final");
    CHECK(*s.relative_improvement == doctest::Approx(0.5));  // 0.3 -> 0.15
    CHECK(*s.backward_transfer == doctest::Approx(-1.0));    // 0.05 -> 0.1
    CHECK(s.forgetting.at("t1") == doctest::Approx(0.1));
    CHECK(s.forgetting.at("t2") == doctest::Approx(-0.1));
    CHECK(s.forgetting.at("m1") == doctest::Approx(0.1));
    CHECK(s.forgetting.at("m2") == doctest::Approx(0.0));
}

TEST_CASE("cumulative risk") {
    const auto suite = make_suite(test::tiny_suite());
    ModelConfig mc = test::tiny_model();
    mc.max_seq_len = 6;
    const auto kb = init_model(mc);

    std::vector<Dataset> seen{labelled(suite, 0)};
    const double one = cumulative_risk(kb, nullptr, seen);
    CHECK(one == doctest::Approx(evaluate_dataset(kb, nullptr, seen[0]).mean_nll).epsilon(1e-12));

    // Independent re-summation: per-sequence forward, log-sum-exp per token.
    double prev = 0.0, oracle = 0.0;
    for (std::size_t k = 0; k < suite.backward.size(); ++k) {
        const auto& ds = suite.backward[k];
        double sum = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            std::span<const std::int32_t> toks(ds.tokens.data() + i * ds.seq_len, ds.seq_len);
            const Tensor logits = forward(kb, toks);
            const std::size_t V = logits.dim(1);
            for (std::size_t p = 0; p < ds.seq_len; ++p) {
                double z = 0.0;
                for (std::size_t c = 0; c < V; ++c) z += std::exp(double(logits.data()[p * V + c]));
                sum += std::log(z) - logits.data()[p * V + std::size_t(ds.labels[i * ds.seq_len + p])];
            }
        }
        oracle += sum / double(ds.size() * ds.seq_len);
        std::span<const Dataset> prefix(suite.backward.data(), k + 1);
        const double risk = cumulative_risk(kb, nullptr, prefix);
        CHECK(risk >= prev);
        CHECK(std::abs(risk - oracle) < 1e-5);
        prev = risk;
    }
    CHECK_THROWS_AS(cumulative_risk(kb, nullptr, std::span<const Dataset>{}), ContractError);
}

TEST_CASE("evaluation is side-effect free and zero adapters change nothing") {
    const auto suite = make_suite(test::tiny_suite());
    ModelConfig mc = test::tiny_model();
    mc.max_seq_len = 6;
    const auto kb = init_model(mc);
    const auto before = params_hash(kb.params);
    const auto row = evaluate_snapshot(kb, nullptr, suite.backward);
    CHECK(params_hash(kb.params) == before);
    CHECK(evaluate_snapshot(kb, nullptr, suite.backward) == row);
    const auto ad = init_adapter(kb, test::tiny_lora(), "d", 3);
    CHECK(evaluate_snapshot(kb, &ad, suite.backward) == row);
    for (double v : row) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "fcl/checkpoint.hpp"
#include "fcl/continual.hpp"
#include "fcl/errors.hpp"
#include "helpers.hpp"

using namespace fcl;

namespace {

const TaskSuite& six_suite() {
    static const TaskSuite suite = make_suite(test::six_stream_suite());
    return suite;
}

const KnowledgeBase& base_kb() {
    static const KnowledgeBase kb = init_model(test::suite_model());
    return kb;
}

DeltaSet naive_mean(const std::vector<LoraAdapter>& ads) {
    std::vector<DeltaSet> ds;
    for (const auto& a : ads) ds.push_back(compose_delta(a));
    return average_deltas(ds);
}

std::vector<LoraAdapter> trained_adapters(std::size_t n) {
    std::vector<LoraAdapter> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(train_adapter(base_kb(), six_suite().stream[i], test::tiny_schedule(3, 1), 3).adapter);
    }
    return out;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fcl-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("train_adapter reads kb only and zero epochs keep the init") {
    const auto& sd = six_suite().stream[0];
    const auto before = params_hash(base_kb().params);
    const auto zero = train_adapter(base_kb(), sd, test::tiny_schedule(3, 0), 3);
    const auto init = init_adapter(base_kb(), test::tiny_lora(), sd.task.id, derive_seed(3, "adapter/" + sd.task.id));
    for (const auto& [name, f] : zero.adapter.factors) {
        CHECK(bit_equal(f.a, init.factors.at(name).a));
        CHECK(bit_equal(f.b, init.factors.at(name).b));
    }
    const auto trained = train_adapter(base_kb(), sd, test::tiny_schedule(3, 2), 3);
    CHECK(params_hash(base_kb().params) == before);
    CHECK(trained.adapter.trained_on == sd.task.id);
    CHECK(compose_delta(trained.adapter).frobenius_norm() > 0);

    StreamDataset empty = sd;
    empty.train = Dataset{};
    CHECK_THROWS_AS(train_adapter(base_kb(), empty, test::tiny_schedule(), 3), ContractError);
}

TEST_CASE("adapter training lowers the loss on a small dataset") {
    const auto langs = make_languages(4, 8, 40, 32, 5);
    CodeSwitchTask task;
    task.id = "toy";
    task.lang_a = 0;
    task.lang_b = 1;
    task.perturb_a = make_perturbation(langs[0], 0.25, 1);
    task.perturb_b = make_perturbation(langs[1], 0.25, 2);
    const auto ds = sample_codeswitch(task, langs, 200, 6, 3);
    auto ad = init_adapter(base_kb(), test::tiny_lora(), "toy", 1);
    TrainOptions o = test::tiny_schedule().train;
    o.epochs = 5;
    o.patience.reset();
    o.sgd.weight_decay = 0;
    const auto log = train_lora(base_kb(), ad, ds, nullptr, o);
    REQUIRE(log.epochs.size() == 5);
    CHECK(log.epochs.back().train_loss < log.epochs.front().train_loss);
}

TEST_CASE("incremental_update keeps a running sum of deltas") {
    const auto ads = trained_adapters(6);
    CentralizationState st;
    for (std::size_t t = 1; t <= ads.size(); ++t) {
        const auto copy = st;
        st = incremental_update(std::move(st), ads[t - 1]);
        CHECK(st.t == t);
        CHECK(copy.t == t - 1);
        const std::vector<LoraAdapter> prefix(ads.begin(), ads.begin() + std::ptrdiff_t(t));
        CHECK(max_abs_diff(scale_delta(st.running_sum, 1.0 / double(t)), naive_mean(prefix)) < 1e-6);
    }
    const auto untrained = init_adapter(base_kb(), test::tiny_lora(), "u", 9);
    const auto next = incremental_update(st, untrained);
    CHECK(max_abs_diff(next.running_sum, st.running_sum) == 0);
    CHECK(next.t == st.t + 1);
}

TEST_CASE("centralize merges the running mean") {
    const auto& kb0 = base_kb();
    const auto ads = trained_adapters(3);
    CentralizationState st = incremental_update({}, ads[0]);

    auto one = centralize(kb0, kb0, st, MergeBase::current);
    CHECK(max_abs_diff(one.delta_avg, compose_delta(ads[0])) == 0);
    CHECK(one.kb.version == kb0.version + 1);
    CHECK(one.state.recent_adapters.empty());
    CHECK(one.state.merges == 1);

    st = incremental_update(incremental_update(st, ads[1]), ads[2]);
    auto three = centralize(kb0, kb0, st, MergeBase::original);
    CHECK(max_abs_diff(three.delta_avg, naive_mean(ads)) < 1e-6);
    const auto expect = lora_merge(kb0, naive_mean(ads));
    for (const auto& [name, w] : kb0.params) CHECK(max_abs_diff(three.kb.params.at(name), expect.params.at(name)) < 1e-6);

    CentralizationState zeros;
    for (int i = 0; i < 3; ++i) zeros = incremental_update(zeros, init_adapter(kb0, test::tiny_lora(), "z", 40 + i));
    auto z = centralize(kb0, kb0, zeros, MergeBase::current);
    CHECK(z.kb.version == kb0.version + 1);
    for (const auto& [name, w] : kb0.params) CHECK(bit_equal(w, z.kb.params.at(name)));

    CHECK_THROWS_AS(centralize(kb0, kb0, CentralizationState{}, MergeBase::current), ContractError);
}

TEST_CASE("centralized weights are a convex combination of the adapter updates") {
    const auto& kb0 = base_kb();
    const auto ads = trained_adapters(3);
    CentralizationState st;
    for (const auto& a : ads) st = incremental_update(std::move(st), a);
    const auto c = centralize(kb0, kb0, st, MergeBase::original);
    for (const auto& [name, delta] : c.delta_avg.layers) {
        const auto& w0 = kb0.params.at(name);
        const auto& wc = c.kb.params.at(name);
        for (std::size_t i = 0; i < w0.numel(); ++i) {
            double lo = 1e30, hi = -1e30;
            for (const auto& a : ads) {
                const double v = compose_delta(a).layers.at(name).data()[i];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            const double moved = double(wc.data()[i]) - double(w0.data()[i]);
            CHECK(moved >= lo - 1e-6);
            CHECK(moved <= hi + 1e-6);
        }
    }
}

TEST_CASE("each centralization mixes the previous average with the new window") {
    const auto& kb0 = base_kb();
    const auto ads = trained_adapters(6);
    CentralizationState st;
    for (std::size_t i = 0; i < 3; ++i) st = incremental_update(std::move(st), ads[i]);
    auto first = centralize(kb0, kb0, st, MergeBase::current);
    st = first.state;
    for (std::size_t i = 3; i < 6; ++i) st = incremental_update(std::move(st), ads[i]);
    auto second = centralize(first.kb, kb0, st, MergeBase::current);
    const std::vector<LoraAdapter> window(ads.begin() + 3, ads.end());
    // t_prev / t = 3 / 6 and (t - t_prev) / t = 3 / 6
    const auto expect = add_deltas(scale_delta(first.delta_avg, 0.5), scale_delta(naive_mean(window), 0.5));
    CHECK(max_abs_diff(second.delta_avg, expect) < 1e-6);
    CHECK(second.kb.version == 2);
}

TEST_CASE("stream schedule: rows, centralization count and stored adapters") {
    std::vector<std::string> observed;
    StreamObserver obs;
    obs.on_snapshot = [&](const std::string& row, const KnowledgeBase&, const LoraAdapter*) { observed.push_back(row); };
    std::size_t progress_calls = 0;
    obs.on_progress = [&](const StreamProgress&) { ++progress_calls; };
    std::vector<std::string> warnings;
    obs.on_warning = [&](const std::string& w) { warnings.push_back(w); };

    const auto r = run_stream(base_kb(), test::tiny_schedule(3, 1), six_suite(), obs);
    CHECK(warnings.empty());
    CHECK(progress_calls == 6);
    const auto& ids = six_suite().stream;
    const std::vector<std::string> expect{"base",
                                          adapter_row(1, ids[0].task.id),
                                          adapter_row(2, ids[1].task.id),
                                          adapter_row(3, ids[2].task.id),
                                          "centralized/1",
                                          adapter_row(4, ids[3].task.id),
                                          adapter_row(5, ids[4].task.id),
                                          adapter_row(6, ids[5].task.id),
                                          "centralized/2"};
    CHECK(r.forward.rows() == expect);
    CHECK(observed == expect);
    CHECK(r.backward.rows() == expect);
    CHECK(r.peak_stored_adapters <= 3);
    std::vector<std::size_t> merge_steps;
    for (const auto& h : r.history) {
        CHECK(h.stored_adapters <= 3);
        if (h.event == "centralize") merge_steps.push_back(h.step);
    }
    CHECK(merge_steps == std::vector<std::size_t>{3, 6});
    CHECK(r.cumulative_risk.size() == expect.size() - 1);
    CHECK(r.final_row() == "centralized/2");
}

TEST_CASE("k beyond the stream length warns and never centralizes") {
    StreamSchedule s = test::tiny_schedule(5, 1);
    s.datasets = {six_suite().stream[0].task.id, six_suite().stream[1].task.id};
    std::vector<std::string> warnings;
    StreamObserver obs;
    obs.on_warning = [&](const std::string& w) { warnings.push_back(w); };
    const auto r = run_stream(base_kb(), s, six_suite(), obs);
    CHECK(warnings.size() == 1);
    CHECK(r.forward.rows().size() == 3);
    for (const auto& h : r.history) CHECK(h.event == "adapter");

    s.k = 0;
    CHECK_THROWS_AS(run_stream(base_kb(), s, six_suite()), ConfigError);
    s.k = 2;
    s.datasets = {"cs9/nope"};
    CHECK_THROWS_AS(run_stream(base_kb(), s, six_suite()), ConfigError);
}

TEST_CASE("centralization is invariant to the order within a window") {
    const auto& st = six_suite().stream;
    auto merged_after = [&](std::vector<std::string> order) {
        StreamSchedule s = test::tiny_schedule(3, 1);
        s.datasets = std::move(order);
        KnowledgeBase out;
        StreamObserver obs;
        obs.on_snapshot = [&](const std::string& row, const KnowledgeBase& kb, const LoraAdapter*) {
            if (row == "centralized/1") out = kb;
        };
        run_stream(base_kb(), s, six_suite(), obs);
        return out;
    };
    const auto a = merged_after({st[0].task.id, st[1].task.id, st[2].task.id});
    const auto b = merged_after({st[2].task.id, st[0].task.id, st[1].task.id});
    REQUIRE(a.version == 1);
    for (const auto& [name, w] : a.params) CHECK(max_abs_diff(w, b.params.at(name)) < 1e-6);
}

TEST_CASE("a resumed stream matches the uninterrupted one") {
    const auto schedule = test::tiny_schedule(3, 1);
    const auto dir = temp_dir("resume");
    StreamObserver obs;
    obs.on_progress = [&](const StreamProgress& p) {
        if (p.next == 4) save_progress(dir, p);
    };
    const auto full = run_stream(base_kb(), schedule, six_suite(), obs);
    auto progress = load_progress(dir);
    CHECK(progress.next == 4);
    CHECK(progress.state.t == 4);
    CHECK(progress.state.recent_adapters.size() == 1);
    const auto resumed = run_stream(base_kb(), schedule, six_suite(), {}, std::move(progress));
    CHECK(resumed.forward == full.forward);
    CHECK(resumed.backward == full.backward);
    CHECK(resumed.history.size() == full.history.size());
    CHECK(resumed.cumulative_risk == full.cumulative_risk);

    auto foreign = load_progress(dir);
    CHECK_THROWS_AS(run_stream(base_kb(), schedule, make_suite(test::six_stream_suite(6)), {}, std::move(foreign)),
                    ContractError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("merge base names") {
    CHECK(parse_merge_base("current") == MergeBase::current);
    CHECK(parse_merge_base("original") == MergeBase::original);
    CHECK(std::string(merge_base_name(MergeBase::original)) == "original");
    CHECK_THROWS_AS(parse_merge_base("latest"), ConfigError);
}

#include "fcl/continual.hpp"

#include <algorithm>
#include <chrono>

#include "fcl/config.hpp"
#include "fcl/errors.hpp"
#include "fcl/seed.hpp"

namespace fcl {

const char* merge_base_name(MergeBase b) { return b == MergeBase::current ? "current" : "original"; }

MergeBase parse_merge_base(const std::string& s) {
    if (s == "current") return MergeBase::current;
    if (s == "original") return MergeBase::original;
    throw ConfigError("unknown merge base '" + s + "' (expected current or original)");
}

TrainOptions StreamSchedule::default_adapter_training() {
    TrainOptions o;
    o.epochs = 6;
    o.batch_size = 32;
    o.sgd.learning_rate = 0.3;
    o.sgd.weight_decay = 3e-2;
    o.patience = 2;
    return o;
}

void StreamSchedule::validate() const {
    if (k < 1) throw ConfigError("schedule: k must be at least 1");
    if (train.batch_size == 0) throw ConfigError("schedule: batch_size must be positive");
    train.sgd.validate();
    if (lora.rank < 1 || lora.alpha <= 0.0 || lora.init_sigma <= 0.0) throw ConfigError("schedule: invalid lora config");
}

TrainedAdapter train_adapter(const KnowledgeBase& kb, const StreamDataset& dataset, const StreamSchedule& schedule,
                             std::uint64_t seed) {
    if (dataset.train.empty()) throw ContractError("train_adapter: empty dataset '" + dataset.task.id + "'");
    const auto& id = dataset.task.id;
    TrainedAdapter out;
    out.adapter = init_adapter(kb, schedule.lora, id, derive_seed(seed, "adapter/" + id));
    TrainOptions opts = schedule.train;
    opts.seed = derive_seed(seed, "train/" + id);
    if (opts.epochs > 0) {
        const Dataset* held = dataset.heldout.empty() ? nullptr : &dataset.heldout;
        out.log = train_lora(kb, out.adapter, dataset.train, held, opts);
    }
    return out;
}

CentralizationState incremental_update(CentralizationState state, const LoraAdapter& adapter) {
    DeltaSet delta = compose_delta(adapter);
    // add_deltas allocates, so a caller's copy of the state never aliases
    // the updated sum.
    state.running_sum = state.running_sum.layers.empty() ? std::move(delta) : add_deltas(state.running_sum, delta);
    state.t += 1;
    state.recent_adapters.push_back(adapter.clone());
    state.peak_stored = std::max(state.peak_stored, state.recent_adapters.size());
    return state;
}

Centralized centralize(const KnowledgeBase& kb, const KnowledgeBase& kb0, CentralizationState state,
                       MergeBase merge_base) {
    if (state.t == 0) throw ContractError("centralize: no adapters have been trained");
    DeltaSet avg = scale_delta(state.running_sum, 1.0 / double(state.t));
    KnowledgeBase merged = lora_merge(merge_base == MergeBase::current ? kb : kb0, avg);
    merged.version = kb.version + 1;
    state.recent_adapters.clear();
    state.merges += 1;
    HistoryEntry h;
    h.step = state.t;
    h.event = "centralize";
    h.label = centralized_row(state.merges);
    h.sparsity = relative_sparsity(avg, kb0);
    h.absolute_sparsity = sparsity(avg, 1e-3);
    h.delta_norm = avg.frobenius_norm();
    h.stored_adapters = 0;
    state.history.push_back(h);
    return {std::move(merged), std::move(state), std::move(avg)};
}

std::vector<const StreamDataset*> resolve_stream(const StreamSchedule& schedule, const TaskSuite& suite) {
    std::vector<const StreamDataset*> out;
    if (schedule.datasets.empty()) {
        for (const auto& sd : suite.stream) out.push_back(&sd);
    } else {
        for (const auto& id : schedule.datasets) {
            auto it = std::find_if(suite.stream.begin(), suite.stream.end(),
                                   [&](const StreamDataset& sd) { return sd.task.id == id; });
            if (it == suite.stream.end()) throw ConfigError("schedule names unknown dataset '" + id + "'");
            out.push_back(&*it);
        }
    }
    if (out.empty()) throw ConfigError("schedule: the stream is empty");
    return out;
}

std::string adapter_row(std::size_t t, const std::string& dataset_id) {
    return "adapter/" + std::to_string(t) + ":" + dataset_id;
}

std::string centralized_row(std::size_t c) { return "centralized/" + std::to_string(c); }

RunReport empty_report(const std::string& method, const TaskSuite& suite,
                       std::span<const StreamDataset* const> stream, std::string schedule_json) {
    RunReport r;
    r.method = method;
    r.schedule_json = std::move(schedule_json);
    r.suite_fingerprint = suite_fingerprint(suite);
    std::vector<std::string> fwd, bwd;
    for (const auto* sd : stream) fwd.push_back(sd->test.id);
    for (const auto& ds : suite.backward) bwd.push_back(ds.id);
    r.forward = MetricsMatrix(fwd);
    r.backward = MetricsMatrix(bwd);
    return r;
}

void record_snapshot(RunReport& report, const TaskSuite& suite, std::span<const StreamDataset* const> stream,
                     std::size_t n_seen, const std::string& row, const KnowledgeBase& kb,
                     const LoraAdapter* adapter, const StreamObserver& observer) {
    std::vector<Dataset> sets;
    for (const auto* sd : stream) sets.push_back(sd->test);
    sets.insert(sets.end(), suite.backward.begin(), suite.backward.end());
    const auto row_values = evaluate_snapshot(kb, adapter, sets);
    const auto split = std::ptrdiff_t(stream.size());
    report.forward.add_row(row, std::vector<double>(row_values.begin(), row_values.begin() + split));
    report.backward.add_row(row, std::vector<double>(row_values.begin() + split, row_values.end()));
    if (n_seen > 0) {
        std::vector<Dataset> seen;
        for (std::size_t i = 0; i < n_seen; ++i) {
            const auto& sd = *stream[i];
            seen.push_back(sd.heldout.empty() ? sd.train : sd.heldout);
        }
        report.cumulative_risk.emplace_back(row, cumulative_risk(kb, adapter, seen));
    }
    if (observer.on_snapshot) observer.on_snapshot(row, kb, adapter);
}

RunReport run_stream(const KnowledgeBase& kb0, const StreamSchedule& schedule, const TaskSuite& suite,
                     const StreamObserver& observer, std::optional<StreamProgress> resume) {
    schedule.validate();
    const auto start = std::chrono::steady_clock::now();
    const auto stream = resolve_stream(schedule, suite);
    const auto n = stream.size();
    if (n % schedule.k != 0 && observer.on_warning) {
        observer.on_warning(n < schedule.k ? "k=" + std::to_string(schedule.k) + " exceeds the stream length " +
                                                 std::to_string(n) + "; no centralization will happen"
                                           : std::to_string(n % schedule.k) +
                                                 " trailing adapters are never centralized");
    }

    StreamProgress p;
    if (resume) {
        p = std::move(*resume);
        if (p.report.suite_fingerprint != suite_fingerprint(suite)) {
            throw ContractError("run_stream: resume state belongs to a different suite");
        }
    } else {
        p.kb = kb0;
        p.report = empty_report("centralized", suite, stream, schedule_json(schedule));
        record_snapshot(p.report, suite, stream, 0, "base", kb0, nullptr, observer);
    }

    for (std::size_t i = p.next; i < n; ++i) {
        auto trained = train_adapter(p.kb, *stream[i], schedule, schedule.seed);
        const std::size_t t = i + 1;
        const auto row = adapter_row(t, stream[i]->task.id);
        record_snapshot(p.report, suite, stream, t, row, p.kb, &trained.adapter, observer);

        const DeltaSet delta = compose_delta(trained.adapter);
        p.state = incremental_update(std::move(p.state), trained.adapter);
        HistoryEntry h;
        h.step = p.state.t;
        h.event = "adapter";
        h.label = row;
        h.sparsity = relative_sparsity(delta, kb0);
        h.absolute_sparsity = sparsity(delta, 1e-3);
        h.delta_norm = delta.frobenius_norm();
        h.stored_adapters = p.state.recent_adapters.size();
        p.state.history.push_back(h);

        if (p.state.t % schedule.k == 0) {
            auto c = centralize(p.kb, kb0, std::move(p.state), schedule.merge_base);
            p.kb = std::move(c.kb);
            p.state = std::move(c.state);
            record_snapshot(p.report, suite, stream, t, centralized_row(p.state.merges), p.kb, nullptr, observer);
        }
        p.report.history = p.state.history;
        p.report.peak_stored_adapters = p.state.peak_stored;
        p.next = t;
        if (observer.on_progress) observer.on_progress(p);
    }

    p.report.history = p.state.history;
    p.report.peak_stored_adapters = p.state.peak_stored;
    p.report.wall_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::move(p.report);
}

}  // namespace fcl

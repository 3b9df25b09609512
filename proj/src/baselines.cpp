#include "fcl/baselines.hpp"

#include <chrono>

#include "fcl/autograd.hpp"
#include "fcl/config.hpp"
#include "fcl/errors.hpp"
#include "fcl/ops.hpp"
#include "fcl/seed.hpp"

namespace fcl {

void SwadtConfig::validate() const {
    if (!(ema_beta >= 0.0 && ema_beta <= 1.0)) throw ConfigError("swadt: ema_beta must lie in [0, 1]");
    if (!(distill_weight >= 0.0)) throw ConfigError("swadt: distill_weight must be non-negative");
    if (!(temperature > 0.0)) throw ConfigError("swadt: temperature must be positive");
}

void ema_update(DeltaSet& x, const DeltaSet& y, double beta) {
    for (auto& [name, t] : x.layers) {
        auto it = y.layers.find(name);
        if (it == y.layers.end() || it->second.shape() != t.shape()) {
            throw DimensionError("ema_update: layer '" + name + "' missing or mismatched");
        }
        auto dst = t.data();
        auto src = it->second.data();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = real(beta * double(dst[i]) + (1.0 - beta) * double(src[i]));
        }
    }
}

Dataset pool_datasets(std::span<const Dataset* const> parts, const std::string& id) {
    if (parts.empty()) throw ContractError("pool_datasets: nothing to pool");
    if (parts.size() == 1) return *parts.front();
    Dataset out;
    out.id = id;
    out.split = parts.front()->split;
    out.seq_len = parts.front()->seq_len;
    for (const auto* p : parts) {
        if (p->seq_len != out.seq_len) throw DimensionError("pool_datasets: sequence lengths differ");
        out.tokens.insert(out.tokens.end(), p->tokens.begin(), p->tokens.end());
        out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
    }
    return out;
}

namespace {

struct Elapsed {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); }
};

void record_merged(RunReport& report, const TaskSuite& suite, std::span<const StreamDataset* const> stream,
                   std::size_t n_seen, const std::string& row, const KnowledgeBase& kb0, const DeltaSet& delta,
                   const StreamObserver& observer) {
    const KnowledgeBase model = lora_merge(kb0, delta);
    record_snapshot(report, suite, stream, n_seen, row, model, nullptr, observer);
}

HistoryEntry adapter_entry(std::size_t t, const std::string& row, const DeltaSet& delta, const KnowledgeBase& kb0) {
    HistoryEntry h;
    h.step = t;
    h.event = "adapter";
    h.label = row;
    h.sparsity = relative_sparsity(delta, kb0);
    h.absolute_sparsity = sparsity(delta, 1e-3);
    h.delta_norm = delta.frobenius_norm();
    h.stored_adapters = 1;
    return h;
}

// Shared by naive_sequential and swadt_run_stream: a single adapter trained
// through the stream in order. Without swadt the evaluated weights are the
// adapter's own; with it they are the EMA.
RunReport sequential_run(const KnowledgeBase& kb0, const StreamSchedule& schedule, const TaskSuite& suite,
                         const SwadtConfig* swadt, const std::string& method, const StreamObserver& observer) {
    schedule.validate();
    if (swadt) swadt->validate();
    Elapsed clock;
    const auto stream = resolve_stream(schedule, suite);
    RunReport report = empty_report(method, suite, stream, schedule_json(schedule));
    record_snapshot(report, suite, stream, 0, "base", kb0, nullptr, observer);

    const auto& first = stream.front()->task.id;
    LoraAdapter adapter = init_adapter(kb0, schedule.lora, first, derive_seed(schedule.seed, "adapter/" + first));
    DeltaSet ema = compose_delta(adapter);
    DeltaSet ema_best;

    for (std::size_t i = 0; i < stream.size(); ++i) {
        const auto& sd = *stream[i];
        adapter.trained_on = sd.task.id;
        TrainOptions opts = schedule.train;
        opts.seed = derive_seed(schedule.seed, "train/" + sd.task.id);

        TrainHooks hooks;
        std::optional<KnowledgeBase> teacher;
        if (swadt) {
            if (swadt->distill_weight > 0.0) {
                teacher = lora_merge(kb0, compose_delta(adapter));
                const double lambda = swadt->distill_weight;
                const double temp = swadt->temperature;
                hooks.extra_loss = [&teacher, lambda, temp](const Minibatch& mb, const Tensor& logits) {
                    Tensor target;
                    {
                        NoGradGuard guard;
                        target = forward(*teacher, mb.view());
                    }
                    return scale(distill_kl(logits, target, temp), lambda);
                };
            }
            const double beta = swadt->ema_beta;
            hooks.on_step = [&ema, &adapter, beta](std::size_t) {
                NoGradGuard guard;
                ema_update(ema, compose_delta(adapter), beta);
            };
            hooks.on_snapshot = [&] { ema_best = ema.clone(); };
            hooks.on_restore = [&] { ema = ema_best.clone(); };
        }
        if (opts.epochs > 0) {
            const Dataset* held = sd.heldout.empty() ? nullptr : &sd.heldout;
            train_lora(kb0, adapter, sd.train, held, opts, hooks);
        }

        const std::size_t t = i + 1;
        const std::string row = method + "/" + std::to_string(t) + ":" + sd.task.id;
        const DeltaSet evaluated = swadt ? ema.clone() : compose_delta(adapter);
        record_merged(report, suite, stream, t, row, kb0, evaluated, observer);
        report.history.push_back(adapter_entry(t, row, evaluated, kb0));
    }
    report.peak_stored_adapters = 1;
    report.wall_seconds = clock.seconds();
    return report;
}

}  // namespace

RunReport swadt_run_stream(const KnowledgeBase& kb0, const StreamSchedule& schedule, const TaskSuite& suite,
                           const SwadtConfig& cfg, const StreamObserver& observer) {
    return sequential_run(kb0, schedule, suite, &cfg, "swadt", observer);
}

RunReport naive_sequential(const KnowledgeBase& kb0, const StreamSchedule& schedule, const TaskSuite& suite,
                           const StreamObserver& observer) {
    return sequential_run(kb0, schedule, suite, nullptr, "naive", observer);
}

RunReport multitask_ceiling(const KnowledgeBase& kb0, const StreamSchedule& schedule, const TaskSuite& suite,
                            const StreamObserver& observer) {
    schedule.validate();
    Elapsed clock;
    const auto stream = resolve_stream(schedule, suite);
    RunReport report = empty_report("ceiling", suite, stream, schedule_json(schedule));
    record_snapshot(report, suite, stream, 0, "base", kb0, nullptr, observer);

    std::vector<const Dataset*> train_parts, held_parts;
    for (const auto* sd : stream) {
        train_parts.push_back(&sd->train);
        if (!sd->heldout.empty()) held_parts.push_back(&sd->heldout);
    }
    const std::string id = stream.size() == 1 ? stream.front()->task.id : std::string("pooled");
    Dataset train = pool_datasets(train_parts, id);
    std::optional<Dataset> held;
    if (held_parts.size() == stream.size()) held = pool_datasets(held_parts, id);

    StreamDataset pooled;
    pooled.task.id = id;
    pooled.train = std::move(train);
    if (held) pooled.heldout = std::move(*held);
    auto trained = train_adapter(kb0, pooled, schedule, schedule.seed);

    record_snapshot(report, suite, stream, stream.size(), "ceiling", kb0, &trained.adapter, observer);
    const DeltaSet delta = compose_delta(trained.adapter);
    report.history.push_back(adapter_entry(stream.size(), "ceiling", delta, kb0));
    report.peak_stored_adapters = 1;
    report.wall_seconds = clock.seconds();
    return report;
}

}  // namespace fcl

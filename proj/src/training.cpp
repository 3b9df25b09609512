#include "fcl/training.hpp"

#include <algorithm>
#include <numeric>

#include "fcl/errors.hpp"
#include "fcl/eval.hpp"
#include "fcl/ops.hpp"
#include "fcl/seed.hpp"

namespace fcl {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "epoch/" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

Minibatch gather(const Dataset& ds, std::span<const std::size_t> rows) {
    Minibatch mb;
    mb.rows = rows.size();
    mb.seq_len = ds.seq_len;
    mb.tokens.reserve(rows.size() * ds.seq_len);
    mb.labels.reserve(rows.size() * ds.seq_len);
    for (auto r : rows) {
        const auto off = std::ptrdiff_t(r * ds.seq_len);
        mb.tokens.insert(mb.tokens.end(), ds.tokens.begin() + off, ds.tokens.begin() + off + std::ptrdiff_t(ds.seq_len));
        mb.labels.insert(mb.labels.end(), ds.labels.begin() + off, ds.labels.begin() + off + std::ptrdiff_t(ds.seq_len));
    }
    return mb;
}

namespace {

void validate(const Dataset& data, const TrainOptions& opts) {
    if (data.empty()) throw ContractError("training: empty dataset '" + data.id + "'");
    if (opts.batch_size == 0) throw ConfigError("training: batch_size must be positive");
    opts.sgd.validate();
}

// Shared epoch loop. step(mb) runs one optimizer step and returns the loss;
// eval() returns the held-out NLL; snapshot()/restore() keep the best state.
struct NoTarget {
    bool operator()(std::size_t) const { return false; }
};

template <class Step, class Eval, class Snapshot, class Restore, class Target = NoTarget>
TrainingLog run_epochs(const Dataset& data, bool has_heldout, const TrainOptions& opts, Step&& step, Eval&& eval,
                       Snapshot&& snapshot, Restore&& restore, Target&& reached = {}) {
    TrainingLog log;
    const bool early_stop = has_heldout && opts.patience.has_value();
    double best = 0.0;
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        const auto order = epoch_order(data.size(), opts.seed, epoch);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t end = std::min(order.size(), start + opts.batch_size);
            Minibatch mb = gather(data, std::span(order).subspan(start, end - start));
            loss_sum += step(mb, log.steps);
            ++log.steps;
            ++batches;
            if (reached(log.steps)) {
                log.reached_target = true;
                break;
            }
        }
        EpochLog e{epoch, loss_sum / double(batches), std::nullopt};
        if (has_heldout) e.heldout_nll = eval();
        log.epochs.push_back(e);
        if (log.reached_target) break;
        if (early_stop) {
            if (!log.best_epoch || *e.heldout_nll < best) {
                best = *e.heldout_nll;
                log.best_epoch = epoch;
                since_best = 0;
                snapshot();
            } else if (++since_best >= *opts.patience) {
                log.early_stopped = true;
                break;
            }
        }
    }
    if (early_stop && !log.reached_target && log.best_epoch && *log.best_epoch + 1 != log.epochs.size()) restore();
    return log;
}

}  // namespace

TrainingLog pretrain_model(KnowledgeBase& kb, const Dataset& data, const std::vector<Dataset>& heldout,
                           const TrainOptions& opts) {
    validate(data, opts);
    auto params = trainable_params(kb);
    ParamMap best;
    auto step = [&](const Minibatch& mb, std::size_t) {
        Tensor logits = forward(kb, mb.view());
        Tensor loss = softmax_cross_entropy(logits, mb.labels);
        backward(loss);
        sgd_step(params, opts.sgd);
        return double(loss.item());
    };
    auto eval = [&] {
        double s = 0.0;
        for (const auto& ds : heldout) s += evaluate_dataset(kb, nullptr, ds).mean_nll;
        return s / double(heldout.size());
    };
    auto reached = [&](std::size_t steps) {
        if (!opts.target_error || heldout.empty() || steps % opts.eval_interval != 0) return false;
        for (const auto& ds : heldout) {
            if (evaluate_dataset(kb, nullptr, ds).error_rate >= *opts.target_error) return false;
        }
        return true;
    };
    auto log = run_epochs(data, !heldout.empty(), opts, step, eval, [&] { best = kb.params; },
                          [&] {
                              for (auto& [name, t] : kb.params) {
                                  auto src = best.at(name).data();
                                  std::copy(src.begin(), src.end(), t.data().begin());
                              }
                          },
                          reached);
    for (auto& [name, t] : kb.params) {
        t.set_requires_grad(false);
        t.clear_grad();
    }
    return log;
}

TrainingLog train_lora(const KnowledgeBase& kb, LoraAdapter& adapter, const Dataset& train, const Dataset* heldout,
                       const TrainOptions& opts, const TrainHooks& hooks) {
    validate(train, opts);
    check_adapter_compatible(kb, adapter);
    std::vector<TrainableParam> params;
    for (auto& t : adapter.parameters()) {
        t.set_requires_grad(true);
        params.push_back({t, true});
    }
    LoraAdapter best;
    auto step = [&](const Minibatch& mb, std::size_t step_index) {
        Tensor logits = forward(kb, mb.view(), &adapter);
        Tensor loss = softmax_cross_entropy(logits, mb.labels);
        if (hooks.extra_loss) loss = add(loss, hooks.extra_loss(mb, logits));
        backward(loss);
        sgd_step(params, opts.sgd);
        if (hooks.on_step) hooks.on_step(step_index);
        return double(loss.item());
    };
    auto eval = [&] { return evaluate_dataset(kb, &adapter, *heldout).mean_nll; };
    auto log = run_epochs(train, heldout && !heldout->empty(), opts, step, eval, [&] {
                              best = adapter.clone();
                              if (hooks.on_snapshot) hooks.on_snapshot();
                          },
                          [&] {
                              for (auto& [name, f] : adapter.factors) {
                                  const auto& src = best.factors.at(name);
                                  std::copy(src.a.data().begin(), src.a.data().end(), f.a.data().begin());
                                  std::copy(src.b.data().begin(), src.b.data().end(), f.b.data().begin());
                              }
                              if (hooks.on_restore) hooks.on_restore();
                          });
    for (auto& t : adapter.parameters()) {
        t.clear_grad();
        t.set_requires_grad(false);
    }
    return log;
}

}  // namespace fcl

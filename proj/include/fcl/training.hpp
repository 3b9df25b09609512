#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "fcl/lora.hpp"
#include "fcl/model.hpp"
#include "fcl/optim.hpp"
#include "fcl/taskgen.hpp"

namespace fcl {

struct TrainOptions {
    std::size_t epochs = 4;
    std::size_t batch_size = 32;
    SgdConfig sgd;
    // Stop after this many epochs without held-out improvement and restore
    // the best epoch. Requires a held-out set.
    std::optional<std::size_t> patience = 2;
    std::uint64_t seed = 0;
    // Pretraining only: stop as soon as every held-out set's token error is
    // below this value, checked every eval_interval steps.
    std::optional<double> target_error;
    std::size_t eval_interval = 25;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean minibatch loss over the epoch
    std::optional<double> heldout_nll;
};

struct TrainingLog {
    std::vector<EpochLog> epochs;
    std::size_t steps = 0;
    bool early_stopped = false;
    bool reached_target = false;
    std::optional<std::size_t> best_epoch;
};

struct Minibatch {
    std::vector<std::int32_t> tokens;
    std::vector<std::int32_t> labels;
    std::size_t rows = 0;
    std::size_t seq_len = 0;

    TokenBatch view() const { return {tokens, rows, seq_len}; }
};

// Row visiting order for one epoch; a pure function of (n, seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);
Minibatch gather(const Dataset& ds, std::span<const std::size_t> rows);

// Trains every base parameter (full fine-tuning) on data.
TrainingLog pretrain_model(KnowledgeBase& kb, const Dataset& data, const std::vector<Dataset>& heldout,
                           const TrainOptions& opts);

struct TrainHooks {
    // Extra loss term added to the cross-entropy of each minibatch, e.g. a
    // distillation penalty. Receives the batch and the student logits.
    std::function<Tensor(const Minibatch&, const Tensor& logits)> extra_loss;
    // Called after every optimizer step.
    std::function<void(std::size_t step)> on_step;
    // Called whenever early stopping snapshots or restores the best epoch, so
    // state kept outside the adapter can follow along.
    std::function<void()> on_snapshot;
    std::function<void()> on_restore;
};

// Trains only the adapter factors; kb is read-only. heldout may be null.
TrainingLog train_lora(const KnowledgeBase& kb, LoraAdapter& adapter, const Dataset& train, const Dataset* heldout,
                       const TrainOptions& opts, const TrainHooks& hooks = {});

}  // namespace fcl

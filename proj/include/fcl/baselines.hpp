#pragma once

#include <cstdint>
#include <vector>

#include "fcl/continual.hpp"

namespace fcl {

struct SwadtConfig {
    double ema_beta = 0.999;
    double distill_weight = 1.0;
    double temperature = 2.0;

    void validate() const;
};

// x <- beta * x + (1 - beta) * y, entry-wise, over matching layers.
void ema_update(DeltaSet& x, const DeltaSet& y, double beta);

// One adapter continued across the whole stream with an EMA of its weights
// and distillation towards the model as it stood before each dataset. Only
// current-dataset inputs are used. Rows: "base", then "swadt/{t}:{id}"
// evaluating the EMA weights.
RunReport swadt_run_stream(const KnowledgeBase& kb0, const StreamSchedule& schedule, const TaskSuite& suite,
                           const SwadtConfig& cfg, const StreamObserver& observer = {});

// One adapter continued across the stream, weight decay only. Rows: "base",
// then "naive/{t}:{id}".
RunReport naive_sequential(const KnowledgeBase& kb0, const StreamSchedule& schedule, const TaskSuite& suite,
                           const StreamObserver& observer = {});

// One adapter trained on the union of the stream datasets. Rows: "base",
// "ceiling".
RunReport multitask_ceiling(const KnowledgeBase& kb0, const StreamSchedule& schedule, const TaskSuite& suite,
                            const StreamObserver& observer = {});

// The union of several datasets, rows kept in order. A single dataset is
// returned unchanged (including its id).
Dataset pool_datasets(std::span<const Dataset* const> parts, const std::string& id);

}  // namespace fcl

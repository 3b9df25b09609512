#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fcl/eval.hpp"
#include "fcl/lora.hpp"
#include "fcl/model.hpp"
#include "fcl/taskgen.hpp"
#include "fcl/training.hpp"

namespace fcl {

// Which model receives the running average at a centralization. current
// merges into the latest knowledge base, so mass merged earlier is applied
// again; original always merges into the pretrained model.
enum class MergeBase { current, original };
const char* merge_base_name(MergeBase b);
MergeBase parse_merge_base(const std::string& s);

struct StreamSchedule {
    std::vector<std::string> datasets;  // empty: the suite's stream in order
    std::size_t k = 3;
    TrainOptions train = default_adapter_training();
    LoraConfig lora;
    MergeBase merge_base = MergeBase::current;
    std::uint64_t seed = 0;

    static TrainOptions default_adapter_training();
    void validate() const;
};

struct CentralizationState {
    DeltaSet running_sum;  // sum of the composed deltas of every adapter so far
    std::size_t t = 0;
    std::vector<LoraAdapter> recent_adapters;  // since the last merge, at most k
    std::size_t merges = 0;
    std::vector<HistoryEntry> history;
    std::size_t peak_stored = 0;
};

struct TrainedAdapter {
    LoraAdapter adapter;
    TrainingLog log;
};

// Adapter init and batch order derive from (seed, dataset id) only, so an
// adapter does not depend on its position in the stream.
TrainedAdapter train_adapter(const KnowledgeBase& kb, const StreamDataset& dataset, const StreamSchedule& schedule,
                             std::uint64_t seed);

CentralizationState incremental_update(CentralizationState state, const LoraAdapter& adapter);

struct Centralized {
    KnowledgeBase kb;
    CentralizationState state;
    DeltaSet delta_avg;
};

// Merges running_sum / t into kb (merge_base current) or kb0 (original).
// The result's version is always kb.version + 1.
Centralized centralize(const KnowledgeBase& kb, const KnowledgeBase& kb0, CentralizationState state,
                       MergeBase merge_base);

// Everything needed to continue an interrupted stream.
struct StreamProgress {
    std::size_t next = 0;  // index into the schedule's dataset list
    KnowledgeBase kb;
    CentralizationState state;
    RunReport report;
};

struct StreamObserver {
    // A model snapshot was evaluated under this row id. adapter is null for
    // merged models.
    std::function<void(const std::string& row, const KnowledgeBase& kb, const LoraAdapter* adapter)> on_snapshot;
    // Called after each dataset is fully processed.
    std::function<void(const StreamProgress&)> on_progress;
    std::function<void(const std::string&)> on_warning;
};

// Resolves schedule.datasets against the suite.
std::vector<const StreamDataset*> resolve_stream(const StreamSchedule& schedule, const TaskSuite& suite);

// Forward columns are the scheduled datasets' test splits, backward columns
// the suite's monolingual test sets.
RunReport empty_report(const std::string& method, const TaskSuite& suite,
                       std::span<const StreamDataset* const> stream, std::string schedule_json);

// Evaluates one row into both matrices. With n_seen > 0 the cumulative risk
// over the held-out splits of the first n_seen datasets is appended too.
void record_snapshot(RunReport& report, const TaskSuite& suite, std::span<const StreamDataset* const> stream,
                     std::size_t n_seen, const std::string& row, const KnowledgeBase& kb,
                     const LoraAdapter* adapter, const StreamObserver& observer);

std::string adapter_row(std::size_t t, const std::string& dataset_id);
std::string centralized_row(std::size_t c);

RunReport run_stream(const KnowledgeBase& kb0, const StreamSchedule& schedule, const TaskSuite& suite,
                     const StreamObserver& observer = {}, std::optional<StreamProgress> resume = std::nullopt);

}  // namespace fcl

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fcl/lora.hpp"
#include "fcl/model.hpp"
#include "fcl/taskgen.hpp"

namespace fcl {

// Unit-cost Levenshtein distance.
std::size_t edit_distance(std::span<const std::int32_t> ref, std::span<const std::int32_t> hyp);
// edit_distance / |ref|; throws ContractError on an empty reference.
double token_error_rate(std::span<const std::int32_t> ref, std::span<const std::int32_t> hyp);

// Model-snapshot x test-set error table. Missing cells are std::nullopt.
class MetricsMatrix {
public:
    MetricsMatrix() = default;
    explicit MetricsMatrix(std::vector<std::string> cols) : cols_(std::move(cols)) {}

    const std::vector<std::string>& cols() const { return cols_; }
    const std::vector<std::string>& rows() const { return rows_; }
    std::size_t row_index(const std::string& row) const;
    bool has_row(const std::string& row) const;

    void add_row(const std::string& row, const std::vector<std::optional<double>>& values);
    void add_row(const std::string& row, const std::vector<double>& values);
    std::optional<double> at(const std::string& row, const std::string& col) const;
    const std::vector<std::optional<double>>& row_values(const std::string& row) const;
    // Mean over the filled cells of a row.
    std::optional<double> avg(const std::string& row) const;

    bool operator==(const MetricsMatrix&) const = default;

private:
    std::vector<std::string> cols_;
    std::vector<std::string> rows_;
    std::vector<std::vector<std::optional<double>>> values_;
};

struct DatasetEval {
    double error_rate = 0.0;
    double mean_nll = 0.0;
};

// Mean per-sequence token error rate (and mean per-token NLL) of a model on
// one dataset. Side-effect free.
DatasetEval evaluate_dataset(const KnowledgeBase& kb, const LoraAdapter* adapter, const Dataset& ds);

// One row: mean token error rate on each test set, evaluated in parallel.
std::vector<double> evaluate_snapshot(const KnowledgeBase& kb, const LoraAdapter* adapter,
                                      std::span<const Dataset> test_sets);

// Sum over seen datasets of the mean token NLL (the cumulative-risk trace).
double cumulative_risk(const KnowledgeBase& kb, const LoraAdapter* adapter, std::span<const Dataset> seen);

struct HistoryEntry {
    std::size_t step = 0;  // number of adapters trained when the entry was made
    std::string event;     // "adapter" or "centralize"
    std::string label;
    double sparsity = 0.0;           // fraction |w| < 1e-3 * RMS(base W)
    double absolute_sparsity = 0.0;  // fraction |w| < 1e-3
    double delta_norm = 0.0;
    std::size_t stored_adapters = 0;
};

struct RunReport {
    std::string method;
    std::string schedule_json;  // echo of the schedule that produced the run
    std::uint64_t suite_fingerprint = 0;
    MetricsMatrix forward;
    MetricsMatrix backward;
    std::vector<HistoryEntry> history;
    std::vector<std::pair<std::string, double>> cumulative_risk;  // (row id, risk)
    std::map<std::string, std::string> checkpoints;               // row id -> path
    std::size_t peak_stored_adapters = 0;
    double wall_seconds = 0.0;

    // Row of the final model of the run.
    std::string final_row() const;
};

struct TransferScores {
    std::optional<double> relative_improvement;  // forward suite, undefined if base AVG is 0
    std::optional<double> backward_transfer;     // same formula on the backward suite
    std::map<std::string, double> forgetting;    // per test set: final - min over earlier rows
};

// (AVG_base - AVG_model) / AVG_base; undefined when AVG_base == 0.
std::optional<double> relative_improvement(double base_avg, double model_avg);

TransferScores transfer_scores(const MetricsMatrix& forward, const MetricsMatrix& backward,
                               const std::string& base_row, const std::string& model_row);
TransferScores transfer_scores(const RunReport& report);

}  // namespace fcl

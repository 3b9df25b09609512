#include "fcl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fcl/errors.hpp"
#include "fcl/ops.hpp"

namespace fcl {

std::size_t edit_distance(std::span<const std::int32_t> ref, std::span<const std::int32_t> hyp) {
    std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= ref.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= hyp.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[hyp.size()];
}

double token_error_rate(std::span<const std::int32_t> ref, std::span<const std::int32_t> hyp) {
    if (ref.empty()) throw ContractError("token_error_rate: empty reference");
    return double(edit_distance(ref, hyp)) / double(ref.size());
}

std::size_t MetricsMatrix::row_index(const std::string& row) const {
    auto it = std::find(rows_.begin(), rows_.end(), row);
    if (it == rows_.end()) throw IndexError("metrics: no row '" + row + "'");
    return std::size_t(it - rows_.begin());
}

bool MetricsMatrix::has_row(const std::string& row) const {
    return std::find(rows_.begin(), rows_.end(), row) != rows_.end();
}

void MetricsMatrix::add_row(const std::string& row, const std::vector<std::optional<double>>& values) {
    if (values.size() != cols_.size()) {
        throw DimensionError("metrics: row '" + row + "' has " + std::to_string(values.size()) + " cells for " +
                             std::to_string(cols_.size()) + " columns");
    }
    if (has_row(row)) throw ContractError("metrics: duplicate row '" + row + "'");
    rows_.push_back(row);
    values_.push_back(values);
}

void MetricsMatrix::add_row(const std::string& row, const std::vector<double>& values) {
    add_row(row, std::vector<std::optional<double>>(values.begin(), values.end()));
}

std::optional<double> MetricsMatrix::at(const std::string& row, const std::string& col) const {
    auto it = std::find(cols_.begin(), cols_.end(), col);
    if (it == cols_.end()) throw IndexError("metrics: no column '" + col + "'");
    return values_[row_index(row)][std::size_t(it - cols_.begin())];
}

const std::vector<std::optional<double>>& MetricsMatrix::row_values(const std::string& row) const {
    return values_[row_index(row)];
}

std::optional<double> MetricsMatrix::avg(const std::string& row) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& v : values_[row_index(row)]) {
        if (v) {
            s += *v;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return s / double(n);
}

DatasetEval evaluate_dataset(const KnowledgeBase& kb, const LoraAdapter* adapter, const Dataset& ds) {
    if (ds.empty()) throw ContractError("evaluate: empty dataset '" + ds.id + "'");
    NoGradGuard no_grad;
    constexpr std::size_t kChunk = 256;
    const std::size_t len = ds.seq_len, n = ds.size(), V = std::size_t(kb.config.vocab_out);
    double ter = 0.0, nll = 0.0;
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t rows = std::min(kChunk, n - start);
        std::span<const std::int32_t> toks(ds.tokens.data() + start * len, rows * len);
        Tensor logits = forward(kb, TokenBatch{toks, rows, len}, adapter);
        const auto pred = argmax_rows(logits);
        for (std::size_t r = 0; r < rows; ++r) {
            std::span<const std::int32_t> ref(ds.labels.data() + (start + r) * len, len);
            std::span<const std::int32_t> hyp(pred.data() + r * len, len);
            ter += token_error_rate(ref, hyp);
        }
        for (std::size_t p = 0; p < rows * len; ++p) {
            const real* row = logits.ptr() + p * V;
            const double mx = *std::max_element(row, row + V);
            double z = 0.0;
            for (std::size_t c = 0; c < V; ++c) z += std::exp(double(row[c]) - mx);
            const auto label = std::size_t(ds.labels[start * len + p]);
            if (label >= V) throw IndexError("evaluate: label outside the model's output vocabulary");
            nll += std::log(z) + mx - double(row[label]);
        }
    }
    return {ter / double(n), nll / double(n * len)};
}

std::vector<double> evaluate_snapshot(const KnowledgeBase& kb, const LoraAdapter* adapter,
                                      std::span<const Dataset> test_sets) {
    if (test_sets.empty()) throw ContractError("evaluate_snapshot: no test sets");
    if (adapter) check_adapter_compatible(kb, *adapter);
    std::vector<double> out(test_sets.size());
    const auto n = static_cast<std::ptrdiff_t>(test_sets.size());
    // Each worker only reads kb/adapter and writes its own cell.
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        out[std::size_t(i)] = evaluate_dataset(kb, adapter, test_sets[std::size_t(i)]).error_rate;
    }
    return out;
}

double cumulative_risk(const KnowledgeBase& kb, const LoraAdapter* adapter, std::span<const Dataset> seen) {
    if (seen.empty()) throw ContractError("cumulative_risk: no seen datasets");
    double total = 0.0;
    for (const auto& ds : seen) total += evaluate_dataset(kb, adapter, ds).mean_nll;
    return total;
}

std::string RunReport::final_row() const {
    if (forward.rows().empty()) throw ContractError("report has no rows");
    return forward.rows().back();
}

std::optional<double> relative_improvement(double base_avg, double model_avg) {
    if (base_avg == 0.0) return std::nullopt;
    return (base_avg - model_avg) / base_avg;
}

TransferScores transfer_scores(const MetricsMatrix& forward, const MetricsMatrix& backward,
                               const std::string& base_row, const std::string& model_row) {
    TransferScores s;
    const auto fb = forward.avg(base_row), fm = forward.avg(model_row);
    if (!fb || !fm) throw ContractError("transfer_scores: forward matrix incomplete");
    s.relative_improvement = relative_improvement(*fb, *fm);
    const auto bb = backward.avg(base_row), bm = backward.avg(model_row);
    if (!bb || !bm) throw ContractError("transfer_scores: backward matrix incomplete");
    s.backward_transfer = relative_improvement(*bb, *bm);

    for (const MetricsMatrix* m : {&forward, &backward}) {
        const std::size_t final_idx = m->row_index(model_row);
        for (std::size_t c = 0; c < m->cols().size(); ++c) {
            const auto& col = m->cols()[c];
            const auto final_v = m->row_values(model_row)[c];
            if (!final_v) continue;
            std::optional<double> best;
            for (std::size_t r = 0; r < final_idx; ++r) {
                const auto v = m->row_values(m->rows()[r])[c];
                if (v && (!best || *v < *best)) best = v;
            }
            s.forgetting[col] = best ? *final_v - *best : 0.0;
        }
    }
    return s;
}

TransferScores transfer_scores(const RunReport& report) {
    return transfer_scores(report.forward, report.backward, report.forward.rows().front(), report.final_row());
}

}  // namespace fcl

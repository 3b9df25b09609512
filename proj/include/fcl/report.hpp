#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fcl/eval.hpp"

namespace fcl {

// Report document schema (report.json):
//   method, suite_fingerprint (hex string), schedule (object),
//   forward / backward: {cols: [..], rows: [{id, values: [number|null], avg}]},
//   history: [{step, event, label, sparsity, absolute_sparsity, delta_norm,
//              stored_adapters}],
//   cumulative_risk: [{row, risk}], checkpoints: {row: path},
//   peak_stored_adapters, wall_seconds, transfer: {...}
nlohmann::ordered_json to_json(const HistoryEntry& h);
HistoryEntry history_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const MetricsMatrix& m);
MetricsMatrix matrix_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json report_to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::ordered_json& j);

// Header "row,<cols>,AVG"; absent cells are empty fields.
std::string matrix_csv(const MetricsMatrix& m);
// Fixed-width text table with an AVG column, error rates in percent.
std::string format_matrix(const MetricsMatrix& m, const std::string& title);

// report.json, forward.csv, backward.csv, history.csv, risk.csv.
void write_report(const std::filesystem::path& dir, const RunReport& r);
RunReport load_report(const std::filesystem::path& dir_or_file);

struct Comparison {
    MetricsMatrix forward;
    MetricsMatrix backward;
    std::vector<std::pair<std::string, TransferScores>> transfer;  // per run
};

// Joins runs over the same suite. A single run keeps its row ids; with
// several, every row is prefixed with "<method>:". Throws
// SuiteMismatchError when fingerprints or columns differ.
Comparison compare_reports(std::span<const RunReport> runs);
std::string format_comparison(const Comparison& c);
void write_comparison(const std::filesystem::path& dir, const Comparison& c);

}  // namespace fcl

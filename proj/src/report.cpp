#include "fcl/report.hpp"

#include <cinttypes>
#include <cstdio>
#include <sstream>

#include "fcl/checkpoint.hpp"
#include "fcl/errors.hpp"

namespace fcl {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json transfer_json(const TransferScores& s) {
    Json j;
    j["relative_improvement"] = optional_json(s.relative_improvement);
    j["backward_transfer"] = optional_json(s.backward_transfer);
    j["forgetting"] = Json::object();
    for (const auto& [col, v] : s.forgetting) j["forgetting"][col] = v;
    return j;
}

}  // namespace

Json to_json(const HistoryEntry& h) {
    return Json{{"step", h.step},
                {"event", h.event},
                {"label", h.label},
                {"sparsity", h.sparsity},
                {"absolute_sparsity", h.absolute_sparsity},
                {"delta_norm", h.delta_norm},
                {"stored_adapters", h.stored_adapters}};
}

HistoryEntry history_from_json(const Json& j) {
    HistoryEntry h;
    h.step = j.at("step").get<std::size_t>();
    h.event = j.at("event").get<std::string>();
    h.label = j.at("label").get<std::string>();
    h.sparsity = j.at("sparsity").get<double>();
    h.absolute_sparsity = j.at("absolute_sparsity").get<double>();
    h.delta_norm = j.at("delta_norm").get<double>();
    h.stored_adapters = j.at("stored_adapters").get<std::size_t>();
    return h;
}

Json to_json(const MetricsMatrix& m) {
    Json j;
    j["cols"] = m.cols();
    j["rows"] = Json::array();
    for (const auto& row : m.rows()) {
        Json vals = Json::array();
        for (const auto& v : m.row_values(row)) vals.push_back(optional_json(v));
        j["rows"].push_back(Json{{"id", row}, {"values", vals}, {"avg", optional_json(m.avg(row))}});
    }
    return j;
}

MetricsMatrix matrix_from_json(const Json& j) {
    MetricsMatrix m(j.at("cols").get<std::vector<std::string>>());
    for (const auto& r : j.at("rows")) {
        std::vector<std::optional<double>> vals;
        for (const auto& v : r.at("values")) {
            vals.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
        }
        m.add_row(r.at("id").get<std::string>(), vals);
    }
    return m;
}

Json report_to_json(const RunReport& r) {
    Json j;
    j["method"] = r.method;
    j["suite_fingerprint"] = hex64(r.suite_fingerprint);
    j["schedule"] = r.schedule_json.empty() ? Json::object() : Json::parse(r.schedule_json);
    j["forward"] = to_json(r.forward);
    j["backward"] = to_json(r.backward);
    j["history"] = Json::array();
    for (const auto& h : r.history) j["history"].push_back(to_json(h));
    j["cumulative_risk"] = Json::array();
    for (const auto& [row, risk] : r.cumulative_risk) j["cumulative_risk"].push_back(Json{{"row", row}, {"risk", risk}});
    j["checkpoints"] = Json::object();
    for (const auto& [row, path] : r.checkpoints) j["checkpoints"][row] = path;
    j["peak_stored_adapters"] = r.peak_stored_adapters;
    j["wall_seconds"] = r.wall_seconds;
    if (!r.forward.rows().empty()) j["transfer"] = transfer_json(transfer_scores(r));
    return j;
}

RunReport report_from_json(const Json& j) {
    RunReport r;
    r.method = j.at("method").get<std::string>();
    r.suite_fingerprint = std::stoull(j.at("suite_fingerprint").get<std::string>(), nullptr, 16);
    r.schedule_json = j.at("schedule").dump();
    r.forward = matrix_from_json(j.at("forward"));
    r.backward = matrix_from_json(j.at("backward"));
    for (const auto& h : j.at("history")) r.history.push_back(history_from_json(h));
    for (const auto& c : j.at("cumulative_risk")) {
        r.cumulative_risk.emplace_back(c.at("row").get<std::string>(), c.at("risk").get<double>());
    }
    for (const auto& [row, path] : j.at("checkpoints").items()) r.checkpoints[row] = path.get<std::string>();
    r.peak_stored_adapters = j.at("peak_stored_adapters").get<std::size_t>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    return r;
}

std::string matrix_csv(const MetricsMatrix& m) {
    std::ostringstream os;
    os << "row";
    for (const auto& c : m.cols()) os << "," << c;
    os << ",AVG\n";
    for (const auto& row : m.rows()) {
        os << row;
        for (const auto& v : m.row_values(row)) os << "," << (v ? num(*v) : "");
        const auto a = m.avg(row);
        os << "," << (a ? num(*a) : "") << "\n";
    }
    return os.str();
}

std::string format_matrix(const MetricsMatrix& m, const std::string& title) {
    std::size_t w0 = 4;
    for (const auto& r : m.rows()) w0 = std::max(w0, r.size());
    std::vector<std::size_t> widths;
    for (const auto& c : m.cols()) widths.push_back(std::max<std::size_t>(7, c.size()));
    auto pad = [](const std::string& s, std::size_t w, bool left) {
        if (s.size() >= w) return s;
        return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
    };
    auto pct = [](const std::optional<double>& v) {
        if (!v) return std::string("-");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
        return std::string(buf);
    };
    std::ostringstream os;
    os << title << "\n" << pad("", w0, true);
    for (std::size_t c = 0; c < m.cols().size(); ++c) os << "  " << pad(m.cols()[c], widths[c], false);
    os << "  " << pad("AVG", 7, false) << "\n";
    for (const auto& row : m.rows()) {
        os << pad(row, w0, true);
        const auto& vals = m.row_values(row);
        for (std::size_t c = 0; c < vals.size(); ++c) os << "  " << pad(pct(vals[c]), widths[c], false);
        os << "  " << pad(pct(m.avg(row)), 7, false) << "\n";
    }
    return os.str();
}

void write_report(const fs::path& dir, const RunReport& r) {
    write_file_atomic(dir / "report.json", report_to_json(r).dump(2) + "\n");
    write_file_atomic(dir / "forward.csv", matrix_csv(r.forward));
    write_file_atomic(dir / "backward.csv", matrix_csv(r.backward));
    std::ostringstream h;
    h << "step,event,label,sparsity,absolute_sparsity,delta_norm,stored_adapters\n";
    for (const auto& e : r.history) {
        h << e.step << "," << e.event << "," << e.label << "," << num(e.sparsity) << "," << num(e.absolute_sparsity)
          << "," << num(e.delta_norm) << "," << e.stored_adapters << "\n";
    }
    write_file_atomic(dir / "history.csv", h.str());
    std::ostringstream c;
    c << "row,cumulative_risk\n";
    for (const auto& [row, risk] : r.cumulative_risk) c << row << "," << num(risk) << "\n";
    write_file_atomic(dir / "risk.csv", c.str());
}

RunReport load_report(const fs::path& dir_or_file) {
    const fs::path file = fs::is_directory(dir_or_file) ? dir_or_file / "report.json" : dir_or_file;
    try {
        return report_from_json(Json::parse(read_file(file)));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt report '" + file.string() + "': " + e.what());
    }
}

Comparison compare_reports(std::span<const RunReport> runs) {
    if (runs.empty()) throw ContractError("compare_reports: no runs given");
    const auto& first = runs.front();
    Comparison c{MetricsMatrix(first.forward.cols()), MetricsMatrix(first.backward.cols()), {}};
    const bool prefix = runs.size() > 1;
    for (const auto& run : runs) {
        if (run.suite_fingerprint != first.suite_fingerprint || run.forward.cols() != first.forward.cols() ||
            run.backward.cols() != first.backward.cols()) {
            throw SuiteMismatchError("run '" + run.method + "' (suite " + hex64(run.suite_fingerprint) +
                                     ") was produced on a different suite than '" + first.method + "' (suite " +
                                     hex64(first.suite_fingerprint) + ")");
        }
        const std::string pre = prefix ? run.method + ":" : "";
        for (const auto& row : run.forward.rows()) {
            std::string id = pre + row;
            // Two runs of the same method get a numeric suffix.
            for (int k = 2; c.forward.has_row(id); ++k) id = pre + row + "#" + std::to_string(k);
            c.forward.add_row(id, run.forward.row_values(row));
            c.backward.add_row(id, run.backward.row_values(row));
        }
        c.transfer.emplace_back(run.method, transfer_scores(run));
    }
    return c;
}

std::string format_comparison(const Comparison& c) {
    std::ostringstream os;
    os << format_matrix(c.forward, "Forward evaluation (token error %)") << "\n"
       << format_matrix(c.backward, "Backward evaluation (token error %)") << "\n"
       << "Transfer scores (final row vs. base)\n";
    auto opt = [](const std::optional<double>& v) {
        if (!v) return std::string("undefined");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%+.2f%%", 100.0 * *v);
        return std::string(buf);
    };
    for (const auto& [method, s] : c.transfer) {
        os << "  " << method << ": relative_improvement " << opt(s.relative_improvement) << ", backward_transfer "
           << opt(s.backward_transfer) << "\n";
    }
    return os.str();
}

void write_comparison(const fs::path& dir, const Comparison& c) {
    write_file_atomic(dir / "forward.csv", matrix_csv(c.forward));
    write_file_atomic(dir / "backward.csv", matrix_csv(c.backward));
    std::ostringstream t;
    t << "method,relative_improvement,backward_transfer\n";
    for (const auto& [method, s] : c.transfer) {
        t << method << "," << (s.relative_improvement ? num(*s.relative_improvement) : "") << ","
          << (s.backward_transfer ? num(*s.backward_transfer) : "") << "\n";
    }
    write_file_atomic(dir / "transfer.csv", t.str());
    write_file_atomic(dir / "tables.txt", format_comparison(c));
}

}  // namespace fcl

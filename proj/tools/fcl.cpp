// Command-line driver: pretrain, stream, report, verify.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "fcl/checkpoint.hpp"
#include "fcl/config.hpp"
#include "fcl/errors.hpp"
#include "fcl/pipeline.hpp"
#include "fcl/report.hpp"

namespace fs = std::filesystem;
using namespace fcl;

namespace {

enum Exit { kOk = 0, kFailure = 1, kBadConfig = 2, kMissingCheckpoint = 3, kSuiteMismatch = 4 };

constexpr const char* kOutputRootEnv = "FCL_OUTPUT_ROOT";

fs::path output_root(const RunConfig& cfg) {
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
    return cfg.output_dir;
}

fs::path kb_path(const RunConfig& cfg) { return output_root(cfg) / "pretrain" / "kb.ckpt"; }

std::string run_name(const std::string& method, const RunConfig& cfg) {
    if (method != "centralized") return method;
    return method + "-k" + std::to_string(cfg.schedule.k) + "-" + merge_base_name(cfg.schedule.merge_base);
}

int cmd_pretrain(const std::string& config_path) {
    const RunConfig cfg = load_run_config(config_path);
    const TaskSuite suite = make_suite(cfg.suite);
    const fs::path dir = output_root(cfg) / "pretrain";
    save_suite(output_root(cfg) / "suite", suite);
    std::cerr << "pretraining on " << suite.pretrain.size() << " sequences\n";
    const Pretrained p = pretrain_knowledge_base(cfg, suite);
    save_knowledge_base(dir / "kb.ckpt", p.kb);

    MetricsMatrix row;
    {
        std::vector<std::string> cols;
        for (const auto& ds : suite.backward) cols.push_back(ds.id);
        row = MetricsMatrix(cols);
        row.add_row("base", p.backward_row);
    }
    write_file_atomic(dir / "backward.csv", matrix_csv(row));
    Json info;
    info["config"] = to_json(cfg);
    info["steps"] = p.log.steps;
    info["epochs"] = p.log.epochs.size();
    info["reached_target"] = p.log.reached_target;
    info["params_hash"] = params_hash(p.kb.params);
    info["backward"] = to_json(row);
    write_file_atomic(dir / "pretrain.json", info.dump(2) + "\n");
    std::cout << format_matrix(row, "Pretrained backward evaluation (token error %)");
    return kOk;
}

int cmd_stream(const std::string& config_path, std::string method, std::optional<std::size_t> k,
               std::optional<std::string> merge_base, bool resume) {
    RunConfig cfg = load_run_config(config_path);
    if (method.empty()) method = cfg.method;
    if (k) cfg.schedule.k = *k;
    if (merge_base) cfg.schedule.merge_base = parse_merge_base(*merge_base);
    cfg.method = method;
    cfg.validate();

    const fs::path ckpt = kb_path(cfg);
    if (!fs::exists(ckpt)) {
        std::cerr << "error: pretrained checkpoint '" << ckpt.string() << "' not found; run 'pretrain' first\n";
        return kMissingCheckpoint;
    }
    const KnowledgeBase kb0 = load_knowledge_base(ckpt);
    if (!(kb0.config == cfg.model)) throw ConfigError("checkpoint model config differs from the run config");
    const TaskSuite suite = make_suite(cfg.suite);

    const fs::path dir = output_root(cfg) / run_name(method, cfg);
    const fs::path snapdir = dir / "snapshots";
    const fs::path statedir = dir / "state";
    fs::create_directories(snapdir);

    std::map<std::string, std::string> checkpoints;
    std::optional<StreamProgress> progress;
    if (resume && fs::exists(statedir / "state.json")) {
        progress = load_progress(statedir);
        checkpoints = progress->report.checkpoints;
        std::cerr << "resuming after dataset " << progress->next << "\n";
    }

    StreamObserver obs;
    obs.on_warning = [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };
    obs.on_snapshot = [&](const std::string& row, const KnowledgeBase& kb, const LoraAdapter* adapter) {
        const std::string kb_file = adapter ? "kb_v" + std::to_string(kb.version) + ".ckpt" : row_file_stem(row) + ".ckpt";
        if (!fs::exists(snapdir / kb_file) || !adapter) save_knowledge_base(snapdir / kb_file, kb);
        checkpoints[row] = (fs::path("snapshots") / kb_file).string();
        if (adapter) {
            const std::string ad_file = row_file_stem(row) + ".adapter";
            save_adapter(snapdir / ad_file, *adapter);
            checkpoints[row + "#adapter"] = (fs::path("snapshots") / ad_file).string();
        }
        std::cerr << "  evaluated " << row << "\n";
    };
    obs.on_progress = [&](const StreamProgress& p) {
        StreamProgress copy{p.next, p.kb, p.state, p.report};
        copy.report.checkpoints = checkpoints;
        save_progress(statedir, copy);
    };

    RunReport report = run_method(cfg, method, kb0, suite, obs, std::move(progress));
    report.checkpoints = checkpoints;
    write_report(dir, report);
    write_file_atomic(dir / "config.json", to_json(cfg).dump(2) + "\n");
    write_file_atomic(dir / "manifest.txt", suite.manifest());
    std::cout << format_comparison(compare_reports(std::span(&report, 1)));
    std::cout << "report written to " << dir.string() << "\n";
    return kOk;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
    std::vector<RunReport> reports;
    for (const auto& r : runs) reports.push_back(load_report(r));
    Comparison c;
    try {
        c = compare_reports(reports);
    } catch (const SuiteMismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kSuiteMismatch;
    }
    std::cout << format_comparison(c);
    if (!out.empty()) write_comparison(out, c);
    return kOk;
}

// Re-evaluates every row of a finished run from its checkpoints.
int cmd_verify(const std::string& run_dir, double tol) {
    const fs::path dir = run_dir;
    const RunReport report = load_report(dir);
    const RunConfig cfg = load_run_config(dir / "config.json");
    const TaskSuite suite = make_suite(cfg.suite);
    if (suite_fingerprint(suite) != report.suite_fingerprint) {
        std::cerr << "error: config regenerates a different suite\n";
        return kSuiteMismatch;
    }
    const auto stream = resolve_stream(cfg.schedule, suite);
    std::vector<Dataset> sets;
    for (const auto* sd : stream) sets.push_back(sd->test);
    sets.insert(sets.end(), suite.backward.begin(), suite.backward.end());
    double worst = 0.0;
    for (const auto& row : report.forward.rows()) {
        auto it = report.checkpoints.find(row);
        if (it == report.checkpoints.end()) {
            std::cerr << "error: no checkpoint recorded for row " << row << "\n";
            return kMissingCheckpoint;
        }
        const KnowledgeBase kb = load_knowledge_base(dir / it->second);
        std::optional<LoraAdapter> adapter;
        if (auto a = report.checkpoints.find(row + "#adapter"); a != report.checkpoints.end()) {
            adapter = load_adapter(dir / a->second);
        }
        const auto values = evaluate_snapshot(kb, adapter ? &*adapter : nullptr, sets);
        std::vector<std::optional<double>> stored = report.forward.row_values(row);
        const auto& b = report.backward.row_values(row);
        stored.insert(stored.end(), b.begin(), b.end());
        for (std::size_t i = 0; i < values.size(); ++i) worst = std::max(worst, std::abs(values[i] - stored[i].value_or(0)));
    }
    std::printf("max |recomputed - stored| = %.3g over %zu rows\n", worst, report.forward.rows().size());
    return worst <= tol ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Factorization-centralization continual learning on synthetic code-switching tasks"};
    app.require_subcommand(1);

    std::string config_path;
    auto* pretrain = app.add_subcommand("pretrain", "Pretrain the knowledge base on the monolingual mixture");
    pretrain->add_option("config", config_path, "Run configuration (JSON)")->required();

    std::string method;
    std::optional<std::size_t> k;
    std::optional<std::string> merge_base;
    bool resume = false;
    auto* stream = app.add_subcommand("stream", "Run one continual-learning method over the stream");
    stream->add_option("config", config_path, "Run configuration (JSON)")->required();
    stream->add_option("--method", method, "Method (default: the config's)")
        ->check(CLI::IsMember({"centralized", "swadt", "naive", "ceiling"}));
    stream->add_option("--k", k, "Centralization period")->check(CLI::PositiveNumber);
    stream->add_option("--merge-base", merge_base, "Merge target")->check(CLI::IsMember({"current", "original"}));
    stream->add_flag("--resume", resume, "Continue from the run's saved state if present");

    std::vector<std::string> runs;
    std::string out;
    auto* report = app.add_subcommand("report", "Join finished runs into comparison tables");
    report->add_option("runs", runs, "Run directories or report.json files")->required();
    report->add_option("--out", out, "Directory for the flat tables");

    std::string run_dir;
    double tol = 1e-6;
    auto* verify = app.add_subcommand("verify", "Re-evaluate a run from its checkpoints");
    verify->add_option("run", run_dir, "Run directory")->required();
    verify->add_option("--tol", tol, "Allowed absolute difference per cell");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pretrain) return cmd_pretrain(config_path);
        if (*stream) return cmd_stream(config_path, method, k, merge_base, resume);
        if (*report) return cmd_report(runs, out);
        if (*verify) return cmd_verify(run_dir, tol);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kBadConfig;
    } catch (const SuiteMismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kSuiteMismatch;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fcl/checkpoint.hpp"
#include "fcl/config.hpp"
#include "fcl/errors.hpp"
#include "fcl/report.hpp"
#include "helpers.hpp"

using namespace fcl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("fcl-io-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream(p) << s;
}

void put_u32(std::string& bytes, std::size_t pos, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes[pos + std::size_t(i)] = char((v >> (8 * i)) & 0xff);
}

RunReport sample_report(const std::string& method, std::uint64_t fingerprint) {
    RunReport r;
    r.method = method;
    r.schedule_json = R"({"k":3})";
    r.suite_fingerprint = fingerprint;
    r.forward = MetricsMatrix({"cs0/L0-L1", "cs1/L0-L2"});
    r.backward = MetricsMatrix({"mono/L0"});
    r.forward.add_row("base", std::vector<double>{0.25, 1.0 / 3.0});
    r.forward.add_row("adapter/1:cs0/L0-L1", std::vector<std::optional<double>>{0.0123456789, std::nullopt});
    r.backward.add_row("base", std::vector<double>{0.0});
    r.backward.add_row("adapter/1:cs0/L0-L1", std::vector<double>{0.0625});
    HistoryEntry h;
    h.step = 1;
    h.event = "adapter";
    h.label = "adapter/1:cs0/L0-L1";
    h.sparsity = 0.5;
    h.absolute_sparsity = 0.75;
    h.delta_norm = 1.5;
    h.stored_adapters = 1;
    r.history.push_back(h);
    r.cumulative_risk = {{"adapter/1:cs0/L0-L1", 2.75}};
    r.checkpoints = {{"base", "ckpt/base.ckpt"}};
    r.peak_stored_adapters = 1;
    r.wall_seconds = 0.5;
    return r;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("knowledge base checkpoints round-trip bit-identically") {
    auto kb = init_model(test::tiny_model());
    kb.version = 3;
    const auto bytes = serialize_knowledge_base(kb);
    CHECK(bytes.substr(0, 4) == "CLKB");
    const auto back = deserialize_knowledge_base(bytes);
    CHECK(back.version == 3);
    CHECK(to_json(back.config) == to_json(kb.config));
    CHECK(params_hash(back.params) == params_hash(kb.params));
    for (const auto& [name, t] : kb.params) CHECK(bit_equal(t, back.params.at(name)));
    CHECK(serialize_knowledge_base(back) == bytes);

    const auto dir = temp_dir("kb");
    save_knowledge_base(dir / "kb.ckpt", kb);
    CHECK(read_file(dir / "kb.ckpt") == bytes);
    CHECK(params_hash(load_knowledge_base(dir / "kb.ckpt").params) == params_hash(kb.params));
    CHECK_THROWS_AS(load_knowledge_base(dir / "missing.ckpt"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("adapter, delta and dataset files round-trip bit-identically") {
    const auto kb = init_model(test::tiny_model());
    auto ad = test::random_adapter(kb, test::tiny_lora(), 4, 0.1);
    ad.trained_on = "cs0/L0-L1";
    const auto ad_back = deserialize_adapter(serialize_adapter(ad));
    CHECK(ad_back.trained_on == ad.trained_on);
    CHECK(ad_back.base_version == ad.base_version);
    CHECK(ad_back.config.rank == ad.config.rank);
    CHECK(ad_back.config.alpha == ad.config.alpha);
    for (const auto& [name, f] : ad.factors) {
        CHECK(bit_equal(f.a, ad_back.factors.at(name).a));
        CHECK(bit_equal(f.b, ad_back.factors.at(name).b));
    }

    const auto delta = compose_delta(ad);
    CHECK(max_abs_diff(deserialize_delta(serialize_delta(delta)), delta) == 0);

    const auto suite = make_suite(test::tiny_suite());
    const auto& ds = suite.stream[0].heldout;
    const auto ds_back = deserialize_dataset(serialize_dataset(ds));
    CHECK(ds_back.id == ds.id);
    CHECK(ds_back.split == ds.split);
    CHECK(ds_back.seq_len == ds.seq_len);
    CHECK(ds_back.tokens == ds.tokens);
    CHECK(ds_back.labels == ds.labels);

    const auto dir = temp_dir("suite");
    const auto written = save_suite(dir, suite);
    CHECK(fs::exists(dir / "manifest.txt"));
    CHECK(written.size() > suite.stream.size() * 3);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint readers reject malformed files") {
    const auto kb = init_model(test::tiny_model());
    const auto good = serialize_knowledge_base(kb);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_knowledge_base(bad_magic), FormatError);
    CHECK_THROWS_AS(deserialize_adapter(good), FormatError);

    auto newer = good;
    put_u32(newer, 4, kFormatVersion + 1);
    try {
        deserialize_knowledge_base(newer);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
    auto zero = good;
    put_u32(zero, 4, 0);
    CHECK_THROWS_AS(deserialize_knowledge_base(zero), FormatError);

    CHECK_THROWS_AS(deserialize_knowledge_base(good.substr(0, good.size() - 1)), FormatError);
    CHECK_THROWS_AS(deserialize_knowledge_base(good.substr(0, 6)), FormatError);
    CHECK_THROWS_AS(deserialize_knowledge_base(good + "x"), FormatError);
    CHECK_THROWS_AS(deserialize_knowledge_base(""), FormatError);
}

TEST_CASE("run config parsing") {
    const auto dir = temp_dir("cfg");

    SUBCASE("defaults and round trip") {
        write_text(dir / "c.json", R"({"seed": 3, "schedule": {"k": 2}})");
        const auto cfg = load_run_config(dir / "c.json");
        CHECK(cfg.seed == 3);
        CHECK(cfg.schedule.k == 2);
        CHECK(cfg.model.vocab_in == cfg.suite.vocab_in);
        const auto again = run_config_from_json(to_json(cfg));
        CHECK(to_json(again) == to_json(cfg));

        write_text(dir / "m.json", R"({"suite": {"vocab_in": 300}, "model": {"d_model": 32}})");
        const auto partial = load_run_config(dir / "m.json");
        CHECK(partial.model.vocab_in == 300);
        CHECK(partial.model.d_model == 32);

        write_text(dir / "d.json", R"({"seed": 4})");
        const auto other = load_run_config(dir / "d.json");
        CHECK(other.suite.seed != cfg.suite.seed);
        CHECK(other.schedule.seed != cfg.schedule.seed);
    }
    SUBCASE("syntax errors") {
        write_text(dir / "c.json", R"({"seed": 3,,})");
        CHECK_THROWS_AS(load_run_config(dir / "c.json"), ConfigError);
    }
    SUBCASE("unknown keys and wrong types") {
        write_text(dir / "c.json", R"({"sed": 3})");
        CHECK_THROWS_AS(load_run_config(dir / "c.json"), ConfigError);
        write_text(dir / "c.json", R"({"schedule": {"k": "three"}})");
        CHECK_THROWS_AS(load_run_config(dir / "c.json"), ConfigError);
        write_text(dir / "c.json", R"({"schedule": {"merge_base": "latest"}})");
        CHECK_THROWS_AS(load_run_config(dir / "c.json"), ConfigError);
    }
    SUBCASE("semantic errors") {
        write_text(dir / "c.json", R"({"model": {"vocab_in": 100}})");
        CHECK_THROWS_AS(load_run_config(dir / "c.json"), ConfigError);
        write_text(dir / "c.json", R"({"method": "magic"})");
        CHECK_THROWS_AS(load_run_config(dir / "c.json"), ConfigError);
        write_text(dir / "c.json", R"({"schedule": {"k": 0}})");
        CHECK_THROWS_AS(load_run_config(dir / "c.json"), ConfigError);
    }
    CHECK_THROWS(load_run_config(dir / "absent.json"));
    fs::remove_all(dir);
}

TEST_CASE("report json round trip") {
    const auto r = sample_report("centralized", 0xfeedfacecafebeefULL);
    const auto json = report_to_json(r);
    CHECK(json.at("suite_fingerprint") == "feedfacecafebeef");
    const auto back = report_from_json(Json::parse(json.dump()));
    CHECK(back.method == r.method);
    CHECK(back.suite_fingerprint == r.suite_fingerprint);
    CHECK(back.forward == r.forward);
    CHECK(back.backward == r.backward);
    REQUIRE(back.history.size() == 1);
    CHECK(back.history[0].label == r.history[0].label);
    CHECK(back.history[0].absolute_sparsity == r.history[0].absolute_sparsity);
    CHECK(back.cumulative_risk == r.cumulative_risk);
    CHECK(back.checkpoints == r.checkpoints);
    CHECK(back.peak_stored_adapters == 1);

    const auto dir = temp_dir("report");
    write_report(dir, r);
    for (const char* f : {"report.json", "forward.csv", "backward.csv", "history.csv", "risk.csv"}) {
        CHECK(fs::exists(dir / f));
    }
    CHECK(load_report(dir).forward == r.forward);
    write_text(dir / "report.json", "{not json");
    CHECK_THROWS_AS(load_report(dir), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("csv AVG column equals the mean of its row") {
    const auto r = sample_report("centralized", 1);
    const auto rows = parse_csv(matrix_csv(r.forward));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == std::vector<std::string>{"row", "cs0/L0-L1", "cs1/L0-L2", "AVG"});
    for (std::size_t i = 1; i < rows.size(); ++i) {
        double sum = 0;
        std::size_t n = 0;
        for (std::size_t c = 1; c + 1 < rows[i].size(); ++c) {
            if (rows[i][c].empty()) continue;
            sum += std::stod(rows[i][c]);
            ++n;
        }
        CHECK(std::abs(std::stod(rows[i].back()) - sum / double(n)) < 1e-9);
    }
    CHECK(format_matrix(r.forward, "forward").find("AVG") != std::string::npos);
}

TEST_CASE("compare_reports joins runs over one suite") {
    const std::vector<RunReport> one{sample_report("centralized", 7)};
    const auto single = compare_reports(one);
    CHECK(single.forward.rows() == one[0].forward.rows());

    const std::vector<RunReport> two{sample_report("centralized", 7), sample_report("naive", 7)};
    const auto joined = compare_reports(two);
    CHECK(joined.forward.rows().size() == 4);
    CHECK(joined.forward.has_row("centralized:base"));
    CHECK(joined.forward.has_row("naive:adapter/1:cs0/L0-L1"));
    CHECK(joined.transfer.size() == 2);
    CHECK(format_comparison(joined).find("naive") != std::string::npos);

    const std::vector<RunReport> same_method{sample_report("naive", 7), sample_report("naive", 7)};
    CHECK(compare_reports(same_method).forward.rows().size() == 4);

    const std::vector<RunReport> mismatch{sample_report("centralized", 7), sample_report("naive", 8)};
    CHECK_THROWS_AS(compare_reports(mismatch), SuiteMismatchError);
    CHECK_THROWS_AS(compare_reports(std::span<const RunReport>{}), ContractError);
}

TEST_CASE("row ids map to safe file stems") {
    CHECK(row_file_stem("adapter/1:cs0/L0-L1") == "adapter_1_cs0_L0-L1");
    CHECK(row_file_stem("base") == "base");
}

#include "fcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fcl/config.hpp"
#include "fcl/errors.hpp"
#include "fcl/report.hpp"

namespace fcl {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.flush();
        if (!out) throw IoError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(char((v >> (8 * i)) & 0xFF));
    }
    void i32(std::int32_t v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(std::uint32_t(s.size()));
        buf_ += s;
    }
    void raw(const char* p, std::size_t n) { buf_.append(p, n); }
    void header(const char* magic, const Json& meta) {
        raw(magic, 4);
        u32(kFormatVersion);
        str(meta.dump());
    }
    void tensor(const std::string& name, const Tensor& t) {
        str(name);
        u32(std::uint32_t(t.rank()));
        for (auto d : t.shape()) u32(std::uint32_t(d));
        for (auto v : t.data()) f32(float(v));
    }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(const std::string& b) : b_(b) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(b_[pos_ + std::size_t(i)])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::int32_t i32() { return std::bit_cast<std::int32_t>(u32()); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Json header(const char* magic) {
        need(4);
        if (std::memcmp(b_.data() + pos_, magic, 4) != 0) {
            throw FormatError("bad magic '" + b_.substr(pos_, 4) + "', expected '" + std::string(magic, 4) + "'");
        }
        pos_ += 4;
        const auto version = u32();
        if (version == 0 || version > kFormatVersion) {
            throw FormatError("unsupported format version " + std::to_string(version) + " (this build reads up to " +
                              std::to_string(kFormatVersion) + ")");
        }
        try {
            return Json::parse(str());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("corrupt metadata block: ") + e.what());
        }
    }
    std::pair<std::string, Tensor> tensor() {
        std::string name = str();
        const auto rank = u32();
        if (rank == 0 || rank > 8) throw FormatError("tensor '" + name + "' has invalid rank " + std::to_string(rank));
        Shape shape;
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(u32());
            n *= shape.back();
        }
        need(4 * n);
        std::vector<real> data(n);
        for (auto& v : data) v = real(f32());
        return {std::move(name), Tensor(shape, std::move(data))};
    }
    void finish() const {
        if (pos_ != b_.size()) throw FormatError(std::to_string(b_.size() - pos_) + " trailing bytes");
    }

private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw FormatError("truncated file");
    }
    const std::string& b_;
    std::size_t pos_ = 0;
};

template <class F>
auto guard_json(F&& f) {
    try {
        return f();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad metadata: ") + e.what());
    }
}

}  // namespace

std::string serialize_knowledge_base(const KnowledgeBase& kb) {
    Writer w;
    Json meta;
    meta["config"] = to_json(kb.config);
    meta["version"] = kb.version;
    w.header(kMagicKnowledgeBase, meta);
    w.u32(std::uint32_t(kb.params.size()));
    for (const auto& [name, t] : kb.params) w.tensor(name, t);
    return w.take();
}

KnowledgeBase deserialize_knowledge_base(const std::string& bytes) {
    Reader r(bytes);
    const Json meta = r.header(kMagicKnowledgeBase);
    KnowledgeBase kb;
    guard_json([&] {
        kb.config = model_config_from_json(meta.at("config"));
        kb.version = meta.at("version").get<std::uint64_t>();
        return 0;
    });
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        auto [name, t] = r.tensor();
        kb.params.insert(name, std::move(t));
    }
    r.finish();
    return kb;
}

std::string serialize_adapter(const LoraAdapter& adapter) {
    Writer w;
    Json meta;
    meta["lora"] = to_json(adapter.config);
    meta["trained_on"] = adapter.trained_on;
    meta["base_version"] = adapter.base_version;
    w.header(kMagicAdapter, meta);
    w.u32(std::uint32_t(2 * adapter.factors.size()));
    for (const auto& [name, f] : adapter.factors) {
        w.tensor(name + "#A", f.a);
        w.tensor(name + "#B", f.b);
    }
    return w.take();
}

LoraAdapter deserialize_adapter(const std::string& bytes) {
    Reader r(bytes);
    const Json meta = r.header(kMagicAdapter);
    LoraAdapter ad;
    guard_json([&] {
        ad.config = lora_config_from_json(meta.at("lora"));
        ad.trained_on = meta.at("trained_on").get<std::string>();
        ad.base_version = meta.at("base_version").get<std::uint64_t>();
        return 0;
    });
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        auto [name, t] = r.tensor();
        if (name.size() < 2 || name[name.size() - 2] != '#') throw FormatError("bad factor record '" + name + "'");
        const char which = name.back();
        auto& f = ad.factors[name.substr(0, name.size() - 2)];
        if (which == 'A') {
            f.a = std::move(t);
        } else if (which == 'B') {
            f.b = std::move(t);
        } else {
            throw FormatError("bad factor record '" + name + "'");
        }
    }
    for (const auto& [name, f] : ad.factors) {
        if (!f.a.defined() || !f.b.defined()) throw FormatError("layer '" + name + "' is missing a factor");
    }
    r.finish();
    return ad;
}

std::string serialize_delta(const DeltaSet& delta) {
    Writer w;
    w.header(kMagicDelta, Json::object());
    w.u32(std::uint32_t(delta.layers.size()));
    for (const auto& [name, t] : delta.layers) w.tensor(name, t);
    return w.take();
}

DeltaSet deserialize_delta(const std::string& bytes) {
    Reader r(bytes);
    r.header(kMagicDelta);
    DeltaSet d;
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        auto [name, t] = r.tensor();
        d.layers[name] = std::move(t);
    }
    r.finish();
    return d;
}

std::string serialize_dataset(const Dataset& ds) {
    Writer w;
    Json meta;
    meta["id"] = ds.id;
    meta["split"] = split_name(ds.split);
    meta["seq_len"] = ds.seq_len;
    meta["samples"] = ds.size();
    w.header(kMagicDataset, meta);
    w.u32(std::uint32_t(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        w.u32(std::uint32_t(ds.seq_len));
        for (std::size_t j = 0; j < ds.seq_len; ++j) w.i32(ds.tokens[i * ds.seq_len + j]);
        for (std::size_t j = 0; j < ds.seq_len; ++j) w.i32(ds.labels[i * ds.seq_len + j]);
    }
    return w.take();
}

Dataset deserialize_dataset(const std::string& bytes) {
    Reader r(bytes);
    const Json meta = r.header(kMagicDataset);
    Dataset ds;
    guard_json([&] {
        ds.id = meta.at("id").get<std::string>();
        const auto split = meta.at("split").get<std::string>();
        if (split == "train") {
            ds.split = Split::train;
        } else if (split == "heldout") {
            ds.split = Split::heldout;
        } else if (split == "test") {
            ds.split = Split::test;
        } else {
            throw FormatError("unknown split '" + split + "'");
        }
        ds.seq_len = meta.at("seq_len").get<std::size_t>();
        return 0;
    });
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        if (r.u32() != ds.seq_len) throw FormatError("record length differs from seq_len");
        for (std::size_t j = 0; j < ds.seq_len; ++j) ds.tokens.push_back(r.i32());
        for (std::size_t j = 0; j < ds.seq_len; ++j) ds.labels.push_back(r.i32());
    }
    r.finish();
    return ds;
}

void save_knowledge_base(const fs::path& path, const KnowledgeBase& kb) {
    write_file_atomic(path, serialize_knowledge_base(kb));
}
KnowledgeBase load_knowledge_base(const fs::path& path) { return deserialize_knowledge_base(read_file(path)); }
void save_adapter(const fs::path& path, const LoraAdapter& adapter) {
    write_file_atomic(path, serialize_adapter(adapter));
}
LoraAdapter load_adapter(const fs::path& path) { return deserialize_adapter(read_file(path)); }
void save_delta(const fs::path& path, const DeltaSet& delta) { write_file_atomic(path, serialize_delta(delta)); }
DeltaSet load_delta(const fs::path& path) { return deserialize_delta(read_file(path)); }
void save_dataset(const fs::path& path, const Dataset& ds) { write_file_atomic(path, serialize_dataset(ds)); }
Dataset load_dataset(const fs::path& path) { return deserialize_dataset(read_file(path)); }

std::string row_file_stem(const std::string& row) {
    std::string s = row;
    for (auto& c : s) {
        if (c == '/' || c == ':' || c == '\\') c = '_';
    }
    return s;
}

std::vector<fs::path> save_suite(const fs::path& dir, const TaskSuite& suite) {
    std::vector<fs::path> out;
    auto save = [&](const Dataset& ds, const std::string& split) {
        fs::path p = dir / (row_file_stem(ds.id) + "." + split + ".ds");
        save_dataset(p, ds);
        out.push_back(p);
    };
    save(suite.pretrain, "train");
    for (const auto& ds : suite.pretrain_heldout) save(ds, "heldout");
    for (const auto& sd : suite.stream) {
        save(sd.train, "train");
        save(sd.heldout, "heldout");
        save(sd.test, "test");
    }
    for (const auto& ds : suite.backward) save(ds, "test");
    const fs::path manifest = dir / "manifest.txt";
    write_file_atomic(manifest, suite.manifest());
    out.push_back(manifest);
    return out;
}

void save_progress(const fs::path& dir, const StreamProgress& p) {
    fs::create_directories(dir / "recent");
    save_knowledge_base(dir / "kb.ckpt", p.kb);
    if (!p.state.running_sum.layers.empty()) save_delta(dir / "running_sum.delta", p.state.running_sum);
    for (std::size_t i = 0; i < p.state.recent_adapters.size(); ++i) {
        save_adapter(dir / "recent" / (std::to_string(i) + ".adapter"), p.state.recent_adapters[i]);
    }
    Json j;
    j["next"] = p.next;
    j["t"] = p.state.t;
    j["merges"] = p.state.merges;
    j["peak_stored"] = p.state.peak_stored;
    j["recent_adapters"] = p.state.recent_adapters.size();
    j["history"] = Json::array();
    for (const auto& h : p.state.history) j["history"].push_back(to_json(h));
    j["report"] = report_to_json(p.report);
    write_file_atomic(dir / "state.json", j.dump(2) + "\n");
}

StreamProgress load_progress(const fs::path& dir) {
    const auto text = read_file(dir / "state.json");
    StreamProgress p;
    try {
        const Json j = Json::parse(text);
        p.next = j.at("next").get<std::size_t>();
        p.state.t = j.at("t").get<std::size_t>();
        p.state.merges = j.at("merges").get<std::size_t>();
        p.state.peak_stored = j.at("peak_stored").get<std::size_t>();
        const auto n_recent = j.at("recent_adapters").get<std::size_t>();
        for (const auto& h : j.at("history")) p.state.history.push_back(history_from_json(h));
        p.report = report_from_json(j.at("report"));
        for (std::size_t i = 0; i < n_recent; ++i) {
            p.state.recent_adapters.push_back(load_adapter(dir / "recent" / (std::to_string(i) + ".adapter")));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt run state '" + (dir / "state.json").string() + "': " + e.what());
    }
    p.kb = load_knowledge_base(dir / "kb.ckpt");
    if (p.state.t > 0) p.state.running_sum = load_delta(dir / "running_sum.delta");
    return p;
}

}  // namespace fcl

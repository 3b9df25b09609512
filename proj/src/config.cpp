#include "fcl/config.hpp"

#include <set>

#include "fcl/checkpoint.hpp"
#include "fcl/errors.hpp"
#include "fcl/seed.hpp"

namespace fcl {

namespace {

// Reads known keys out of a JSON object and rejects anything left over.
class Fields {
public:
    Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
    }
    ~Fields() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
        }
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type (" + j_.at(key).dump() + ")");
        }
    }
    template <class T>
    void get_optional(const char* key, std::optional<T>& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        if (j_.at(key).is_null()) {
            out.reset();
            return;
        }
        T v{};
        get(key, v);
        out = v;
    }
    const Json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

TrainOptions RunConfig::default_pretraining() {
    TrainOptions o;
    o.epochs = 3;
    o.batch_size = 32;
    o.sgd.learning_rate = 0.3;
    o.sgd.weight_decay = 1e-4;
    o.patience = 2;
    return o;
}

void RunConfig::apply_master_seed() {
    suite.seed = derive_seed(seed, "suite");
    model.seed = derive_seed(seed, "model");
    pretrain.seed = derive_seed(seed, "pretrain");
    schedule.seed = derive_seed(seed, "stream");
}

void RunConfig::validate() const {
    suite.validate();
    model.validate();
    schedule.validate();
    swadt.validate();
    pretrain.sgd.validate();
    if (model.vocab_in != suite.vocab_in || model.vocab_out != suite.vocab_out) {
        throw ConfigError("model vocabulary sizes must match the suite's");
    }
    if (std::size_t(model.max_seq_len) < suite.seq_len) throw ConfigError("suite seq_len exceeds model max_seq_len");
    static const std::set<std::string> methods{"centralized", "swadt", "naive", "ceiling"};
    if (!methods.count(method)) throw ConfigError("unknown method '" + method + "'");
}

Json to_json(const ModelConfig& c) {
    return Json{{"vocab_in", c.vocab_in}, {"vocab_out", c.vocab_out}, {"d_model", c.d_model},
                {"n_layers", c.n_layers}, {"n_heads", c.n_heads},     {"d_ff", c.d_ff},
                {"max_seq_len", c.max_seq_len}, {"seed", c.seed},     {"positional", c.positional}};
}

Json to_json(const LoraConfig& c) {
    return Json{{"rank", c.rank}, {"alpha", c.alpha}, {"init_sigma", c.init_sigma}, {"target_layers", c.target_layers}};
}

Json to_json(const SgdConfig& c) {
    return Json{{"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"grad_clip_norm", optional_json(c.grad_clip_norm)}};
}

Json to_json(const TrainOptions& c) {
    Json j{{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"sgd", to_json(c.sgd)}};
    j["patience"] = c.patience ? Json(*c.patience) : Json(nullptr);
    j["seed"] = c.seed;
    j["target_error"] = optional_json(c.target_error);
    j["eval_interval"] = c.eval_interval;
    return j;
}

Json to_json(const SuiteConfig& c) {
    Json stream = Json::array();
    for (const auto& s : c.stream) {
        stream.push_back(Json{{"lang_a", s.lang_a},
                              {"lang_b", s.lang_b},
                              {"mix_ratio", s.mix_ratio},
                              {"rho", s.rho},
                              {"train_samples", s.train_samples}});
    }
    return Json{{"n_languages", c.n_languages},
                {"vocab_per_lang", c.vocab_per_lang},
                {"vocab_in", c.vocab_in},
                {"vocab_out", c.vocab_out},
                {"seq_len", c.seq_len},
                {"pretrain_samples_per_lang", c.pretrain_samples_per_lang},
                {"test_samples", c.test_samples},
                {"heldout_fraction", c.heldout_fraction},
                {"stream", stream},
                {"seed", c.seed}};
}

Json to_json(const StreamSchedule& c) {
    return Json{{"datasets", c.datasets},
                {"k", c.k},
                {"train", to_json(c.train)},
                {"lora", to_json(c.lora)},
                {"merge_base", merge_base_name(c.merge_base)},
                {"seed", c.seed}};
}

Json to_json(const SwadtConfig& c) {
    return Json{{"ema_beta", c.ema_beta}, {"distill_weight", c.distill_weight}, {"temperature", c.temperature}};
}

Json to_json(const RunConfig& c) {
    return Json{{"seed", c.seed},
                {"method", c.method},
                {"output_dir", c.output_dir},
                {"suite", to_json(c.suite)},
                {"model", to_json(c.model)},
                {"pretrain", to_json(c.pretrain)},
                {"schedule", to_json(c.schedule)},
                {"swadt", to_json(c.swadt)}};
}

ModelConfig model_config_from_json(const Json& j) {
    ModelConfig c;
    Fields f(j, "model");
    f.get("vocab_in", c.vocab_in);
    f.get("vocab_out", c.vocab_out);
    f.get("d_model", c.d_model);
    f.get("n_layers", c.n_layers);
    f.get("n_heads", c.n_heads);
    f.get("d_ff", c.d_ff);
    f.get("max_seq_len", c.max_seq_len);
    f.get("seed", c.seed);
    f.get("positional", c.positional);
    return c;
}

LoraConfig lora_config_from_json(const Json& j) {
    LoraConfig c;
    Fields f(j, "lora");
    f.get("rank", c.rank);
    f.get("alpha", c.alpha);
    f.get("init_sigma", c.init_sigma);
    f.get("target_layers", c.target_layers);
    return c;
}

SgdConfig sgd_config_from_json(const Json& j) {
    SgdConfig c;
    Fields f(j, "sgd");
    f.get("learning_rate", c.learning_rate);
    f.get("weight_decay", c.weight_decay);
    f.get_optional("grad_clip_norm", c.grad_clip_norm);
    return c;
}

TrainOptions train_options_from_json(const Json& j, TrainOptions c) {
    Fields f(j, "train");
    f.get("epochs", c.epochs);
    f.get("batch_size", c.batch_size);
    if (const auto* s = f.sub("sgd")) {
        // Keys absent from the file keep this stage's defaults.
        Json merged = to_json(c.sgd);
        for (const auto& [k, v] : s->items()) merged[k] = v;
        c.sgd = sgd_config_from_json(merged);
    }
    f.get_optional("patience", c.patience);
    f.get("seed", c.seed);
    f.get_optional("target_error", c.target_error);
    f.get("eval_interval", c.eval_interval);
    return c;
}

SuiteConfig suite_config_from_json(const Json& j) {
    SuiteConfig c;
    Fields f(j, "suite");
    f.get("n_languages", c.n_languages);
    f.get("vocab_per_lang", c.vocab_per_lang);
    f.get("vocab_in", c.vocab_in);
    f.get("vocab_out", c.vocab_out);
    f.get("seq_len", c.seq_len);
    f.get("pretrain_samples_per_lang", c.pretrain_samples_per_lang);
    f.get("test_samples", c.test_samples);
    f.get("heldout_fraction", c.heldout_fraction);
    f.get("seed", c.seed);
    if (const auto* s = f.sub("stream")) {
        if (!s->is_array()) throw ConfigError("suite.stream: expected an array");
        c.stream.clear();
        for (const auto& item : *s) {
            StreamTaskSpec t;
            Fields g(item, "suite.stream[]");
            g.get("lang_a", t.lang_a);
            g.get("lang_b", t.lang_b);
            g.get("mix_ratio", t.mix_ratio);
            g.get("rho", t.rho);
            g.get("train_samples", t.train_samples);
            c.stream.push_back(t);
        }
    }
    return c;
}

StreamSchedule schedule_from_json(const Json& j) {
    StreamSchedule c;
    Fields f(j, "schedule");
    f.get("datasets", c.datasets);
    f.get("k", c.k);
    if (const auto* t = f.sub("train")) c.train = train_options_from_json(*t, c.train);
    if (const auto* l = f.sub("lora")) c.lora = lora_config_from_json(*l);
    std::string mb = merge_base_name(c.merge_base);
    f.get("merge_base", mb);
    c.merge_base = parse_merge_base(mb);
    f.get("seed", c.seed);
    return c;
}

SwadtConfig swadt_config_from_json(const Json& j) {
    SwadtConfig c;
    Fields f(j, "swadt");
    f.get("ema_beta", c.ema_beta);
    f.get("distill_weight", c.distill_weight);
    f.get("temperature", c.temperature);
    return c;
}

RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    Fields f(j, "config");
    f.get("seed", c.seed);
    f.get("method", c.method);
    f.get("output_dir", c.output_dir);
    std::string seeds = "master";
    f.get("seeds", seeds);
    if (seeds != "master" && seeds != "explicit") throw ConfigError("config.seeds: expected 'master' or 'explicit'");
    if (const auto* s = f.sub("suite")) c.suite = suite_config_from_json(*s);
    // Vocabulary sizes not given for the model follow the suite.
    const auto* m = f.sub("model");
    if (m) c.model = model_config_from_json(*m);
    if (!m || !m->contains("vocab_in")) c.model.vocab_in = c.suite.vocab_in;
    if (!m || !m->contains("vocab_out")) c.model.vocab_out = c.suite.vocab_out;
    if (const auto* p = f.sub("pretrain")) c.pretrain = train_options_from_json(*p, c.pretrain);
    if (const auto* s = f.sub("schedule")) c.schedule = schedule_from_json(*s);
    if (const auto* s = f.sub("swadt")) c.swadt = swadt_config_from_json(*s);
    if (seeds == "master") c.apply_master_seed();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    RunConfig c = run_config_from_json(j);
    c.validate();
    return c;
}

std::string schedule_json(const StreamSchedule& schedule) { return to_json(schedule).dump(); }

}  // namespace fcl

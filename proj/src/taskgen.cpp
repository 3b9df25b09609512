#include "fcl/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "fcl/errors.hpp"
#include "fcl/seed.hpp"

namespace fcl {

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::heldout: return "heldout";
        case Split::test: return "test";
    }
    return "?";
}

std::int32_t Perturbation::apply(const Language& lang, std::int32_t token) const {
    if (sigma.empty()) return token;
    return lang.vocab_begin + sigma.at(std::size_t(token - lang.vocab_begin));
}

std::size_t Perturbation::moved() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < sigma.size(); ++i) n += sigma[i] != std::int32_t(i) ? 1 : 0;
    return n;
}

std::vector<Language> make_languages(int n_languages, int vocab_per_lang, int vocab_in, int vocab_out,
                                     std::uint64_t seed) {
    if (n_languages <= 0 || vocab_per_lang <= 0) throw ConfigError("languages: counts must be positive");
    if (std::int64_t(n_languages) * vocab_per_lang > vocab_in) {
        throw ConfigError("languages: " + std::to_string(n_languages) + " x " + std::to_string(vocab_per_lang) +
                          " tokens overflow vocab_in " + std::to_string(vocab_in));
    }
    if (std::int64_t(n_languages) * vocab_per_lang > vocab_out) {
        throw ConfigError("languages: label blocks overflow vocab_out " + std::to_string(vocab_out));
    }
    std::vector<Language> out;
    for (int l = 0; l < n_languages; ++l) {
        Language lang;
        lang.id = "L" + std::to_string(l);
        lang.vocab_begin = l * vocab_per_lang;
        lang.vocab_end = lang.vocab_begin + vocab_per_lang;
        lang.out_begin = l * vocab_per_lang;
        lang.seed = derive_seed(seed, "language/" + lang.id);
        lang.mapping.resize(std::size_t(vocab_per_lang));
        std::iota(lang.mapping.begin(), lang.mapping.end(), lang.out_begin);
        Rng rng(lang.seed);
        std::shuffle(lang.mapping.begin(), lang.mapping.end(), rng);
        out.push_back(std::move(lang));
    }
    return out;
}

Perturbation make_perturbation(const Language& lang, double rho, std::uint64_t seed) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("perturbation: rho must lie in [0, 1]");
    const auto n = std::size_t(lang.size());
    Perturbation p;
    p.rho = rho;
    p.sigma.resize(n);
    std::iota(p.sigma.begin(), p.sigma.end(), 0);
    auto count = static_cast<std::size_t>(std::llround(rho * double(n)));
    if (count == 1) count = 2;
    if (count < 2) return p;
    std::vector<std::int32_t> chosen(p.sigma);
    Rng rng(seed);
    std::shuffle(chosen.begin(), chosen.end(), rng);
    chosen.resize(count);
    for (std::size_t i = 0; i < count; ++i) p.sigma[std::size_t(chosen[i])] = chosen[(i + 1) % count];
    return p;
}

Dataset sample_monolingual(const Language& lang, std::size_t n, std::size_t len, std::uint64_t seed) {
    if (n == 0 || len == 0) throw ContractError("sample_monolingual: n and len must be positive");
    Dataset ds;
    ds.id = "mono/" + lang.id;
    ds.split = Split::test;
    ds.seq_len = len;
    ds.tokens.resize(n * len);
    ds.labels.resize(n * len);
    Rng rng(seed);
    std::uniform_int_distribution<std::int32_t> tok(lang.vocab_begin, lang.vocab_end - 1);
    for (std::size_t i = 0; i < n * len; ++i) {
        ds.tokens[i] = tok(rng);
        ds.labels[i] = lang.map(ds.tokens[i]);
    }
    return ds;
}

Dataset sample_codeswitch(const CodeSwitchTask& task, const std::vector<Language>& langs, std::size_t n,
                          std::size_t len, std::uint64_t seed) {
    if (n == 0 || len == 0) throw ContractError("sample_codeswitch: n and len must be positive");
    const Language& a = langs.at(task.lang_a);
    const Language& b = langs.at(task.lang_b);
    Dataset ds;
    ds.id = task.id;
    ds.split = Split::train;
    ds.seq_len = len;
    ds.tokens.resize(n * len);
    ds.labels.resize(n * len);
    Rng rng(seed);
    std::bernoulli_distribution pick_a(task.mix_ratio);
    std::uniform_int_distribution<std::int32_t> tok_a(a.vocab_begin, a.vocab_end - 1);
    std::uniform_int_distribution<std::int32_t> tok_b(b.vocab_begin, b.vocab_end - 1);
    for (std::size_t i = 0; i < n * len; ++i) {
        if (pick_a(rng)) {
            ds.tokens[i] = tok_a(rng);
            ds.labels[i] = a.map(task.perturb_a.apply(a, ds.tokens[i]));
        } else {
            ds.tokens[i] = tok_b(rng);
            ds.labels[i] = b.map(task.perturb_b.apply(b, ds.tokens[i]));
        }
    }
    return ds;
}

std::vector<StreamTaskSpec> SuiteConfig::default_stream() {
    // Six code-switch pairs over languages L0..L4; L5..L7 never appear.
    return {
        {0, 1, 0.5, 0.25, 1000}, {0, 2, 0.5, 0.25, 2000}, {1, 3, 0.5, 0.25, 1500},
        {0, 4, 0.5, 0.25, 1000}, {2, 3, 0.5, 0.25, 1200}, {0, 3, 0.5, 0.25, 1800},
    };
}

void SuiteConfig::validate() const {
    if (seq_len == 0) throw ConfigError("suite: seq_len must be positive");
    if (test_samples == 0 || pretrain_samples_per_lang == 0) throw ConfigError("suite: sample counts must be positive");
    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) throw ConfigError("suite: heldout_fraction must lie in (0, 1)");
    if (stream.empty()) throw ConfigError("suite: stream must contain at least one dataset");
    for (const auto& s : stream) {
        if (s.lang_a >= std::size_t(n_languages) || s.lang_b >= std::size_t(n_languages)) {
            throw ConfigError("suite: stream task refers to a language outside [0, " + std::to_string(n_languages) + ")");
        }
        if (s.lang_a == s.lang_b) throw ConfigError("suite: a code-switch task needs two distinct languages");
        if (!(s.mix_ratio > 0.0 && s.mix_ratio < 1.0)) throw ConfigError("suite: mix_ratio must lie in (0, 1)");
        if (!(s.rho >= 0.0 && s.rho <= 1.0)) throw ConfigError("suite: rho must lie in [0, 1]");
        if (s.train_samples < 2) throw ConfigError("suite: stream datasets need at least two samples");
    }
}

namespace {

// Draws samples until it has n sequences not seen anywhere else in the suite.
class UniqueSampler {
public:
    template <class Draw>
    Dataset draw(std::size_t n, std::size_t len, Draw&& draw_batch) {
        Dataset out;
        out.seq_len = len;
        std::uint64_t round = 0;
        while (out.size() < n) {
            Dataset batch = draw_batch(n - out.size(), round++);
            out.id = batch.id;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                std::string key(reinterpret_cast<const char*>(batch.tokens.data() + i * len), len * sizeof(std::int32_t));
                if (!seen_.insert(std::move(key)).second) continue;
                out.tokens.insert(out.tokens.end(), batch.tokens.begin() + std::ptrdiff_t(i * len),
                                  batch.tokens.begin() + std::ptrdiff_t((i + 1) * len));
                out.labels.insert(out.labels.end(), batch.labels.begin() + std::ptrdiff_t(i * len),
                                  batch.labels.begin() + std::ptrdiff_t((i + 1) * len));
            }
            if (round > 64) throw ConfigError("suite: sample space too small for the requested unique sample count");
        }
        return out;
    }

private:
    std::unordered_set<std::string> seen_;
};

Dataset take_rows(const Dataset& ds, std::size_t begin, std::size_t end) {
    Dataset out;
    out.id = ds.id;
    out.seq_len = ds.seq_len;
    out.tokens.assign(ds.tokens.begin() + std::ptrdiff_t(begin * ds.seq_len), ds.tokens.begin() + std::ptrdiff_t(end * ds.seq_len));
    out.labels.assign(ds.labels.begin() + std::ptrdiff_t(begin * ds.seq_len), ds.labels.begin() + std::ptrdiff_t(end * ds.seq_len));
    return out;
}

}  // namespace

TaskSuite make_suite(const SuiteConfig& cfg) {
    cfg.validate();
    TaskSuite suite;
    suite.config = cfg;
    suite.languages = make_languages(cfg.n_languages, cfg.vocab_per_lang, cfg.vocab_in, cfg.vocab_out, cfg.seed);
    const std::size_t len = cfg.seq_len;
    UniqueSampler sampler;

    // Test sets are drawn first so they can never collide with training data.
    for (const auto& lang : suite.languages) {
        Dataset ds = sampler.draw(cfg.test_samples, len, [&](std::size_t n, std::uint64_t round) {
            return sample_monolingual(lang, n, len, derive_seed(cfg.seed, "backward/" + lang.id + "/" + std::to_string(round)));
        });
        ds.id = "mono/" + lang.id;
        ds.split = Split::test;
        suite.backward.push_back(std::move(ds));
    }
    for (std::size_t t = 0; t < cfg.stream.size(); ++t) {
        const auto& spec = cfg.stream[t];
        StreamDataset sd;
        auto& task = sd.task;
        task.id = "cs" + std::to_string(t + 1) + "/" + suite.languages[spec.lang_a].id + "-" + suite.languages[spec.lang_b].id;
        task.lang_a = spec.lang_a;
        task.lang_b = spec.lang_b;
        task.mix_ratio = spec.mix_ratio;
        task.seed = derive_seed(cfg.seed, "task/" + task.id);
        task.perturb_a = make_perturbation(suite.languages[spec.lang_a], spec.rho, derive_seed(task.seed, "perturb/a"));
        task.perturb_b = make_perturbation(suite.languages[spec.lang_b], spec.rho, derive_seed(task.seed, "perturb/b"));
        sd.test = sampler.draw(cfg.test_samples, len, [&](std::size_t n, std::uint64_t round) {
            return sample_codeswitch(task, suite.languages, n, len, derive_seed(task.seed, "test/" + std::to_string(round)));
        });
        sd.test.id = task.id;
        sd.test.split = Split::test;
        suite.stream.push_back(std::move(sd));
    }
    for (auto& sd : suite.stream) {
        const auto total = cfg.stream[std::size_t(&sd - suite.stream.data())].train_samples;
        Dataset all = sampler.draw(total, len, [&](std::size_t n, std::uint64_t round) {
            return sample_codeswitch(sd.task, suite.languages, n, len, derive_seed(sd.task.seed, "train/" + std::to_string(round)));
        });
        auto n_held = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.heldout_fraction * double(total))));
        sd.heldout = take_rows(all, 0, n_held);
        sd.heldout.id = sd.task.id;
        sd.heldout.split = Split::heldout;
        sd.train = take_rows(all, n_held, total);
        sd.train.id = sd.task.id;
        sd.train.split = Split::train;
    }

    // Pretraining mixture: monolingual data from every language, interleaved.
    std::vector<Dataset> per_lang;
    for (const auto& lang : suite.languages) {
        Dataset all = sampler.draw(cfg.pretrain_samples_per_lang, len, [&](std::size_t n, std::uint64_t round) {
            return sample_monolingual(lang, n, len, derive_seed(cfg.seed, "pretrain/" + lang.id + "/" + std::to_string(round)));
        });
        const auto n_held = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(cfg.heldout_fraction * double(all.size()))));
        Dataset held = take_rows(all, 0, n_held);
        held.id = "pretrain/" + lang.id;
        held.split = Split::heldout;
        suite.pretrain_heldout.push_back(std::move(held));
        per_lang.push_back(take_rows(all, n_held, all.size()));
    }
    std::vector<std::pair<std::size_t, std::size_t>> order;
    for (std::size_t l = 0; l < per_lang.size(); ++l) {
        for (std::size_t i = 0; i < per_lang[l].size(); ++i) order.emplace_back(l, i);
    }
    Rng rng(derive_seed(cfg.seed, "pretrain/shuffle"));
    std::shuffle(order.begin(), order.end(), rng);
    suite.pretrain.id = "pretrain";
    suite.pretrain.split = Split::train;
    suite.pretrain.seq_len = len;
    for (auto [l, i] : order) {
        const auto& src = per_lang[l];
        suite.pretrain.tokens.insert(suite.pretrain.tokens.end(), src.tokens.begin() + std::ptrdiff_t(i * len),
                                     src.tokens.begin() + std::ptrdiff_t((i + 1) * len));
        suite.pretrain.labels.insert(suite.pretrain.labels.end(), src.labels.begin() + std::ptrdiff_t(i * len),
                                     src.labels.begin() + std::ptrdiff_t((i + 1) * len));
    }
    return suite;
}

std::vector<std::size_t> TaskSuite::stream_languages() const {
    std::set<std::size_t> s;
    for (const auto& sd : stream) {
        s.insert(sd.task.lang_a);
        s.insert(sd.task.lang_b);
    }
    return {s.begin(), s.end()};
}

std::vector<std::size_t> TaskSuite::untouched_languages() const {
    const auto touched = stream_languages();
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < languages.size(); ++l) {
        if (!std::binary_search(touched.begin(), touched.end(), l)) out.push_back(l);
    }
    return out;
}

std::string TaskSuite::manifest() const {
    std::ostringstream os;
    os << "suite seed=" << config.seed << " languages=" << languages.size() << " seq_len=" << config.seq_len << "\n";
    for (const auto& lang : languages) {
        os << "language " << lang.id << " tokens=[" << lang.vocab_begin << "," << lang.vocab_end << ") labels=["
           << lang.out_begin << "," << lang.out_begin + lang.size() << ")\n";
    }
    for (const auto& sd : stream) {
        os << "stream " << sd.task.id << " touches=" << languages[sd.task.lang_a].id << ","
           << languages[sd.task.lang_b].id << " mix=" << sd.task.mix_ratio << " rho=" << sd.task.perturb_a.rho
           << " train=" << sd.train.size() << " heldout=" << sd.heldout.size() << " test=" << sd.test.size() << "\n";
    }
    for (const auto& b : backward) os << "backward " << b.id << " test=" << b.size() << "\n";
    os << "untouched";
    for (auto l : untouched_languages()) os << " " << languages[l].id;
    os << "\n";
    return os.str();
}

std::uint64_t suite_fingerprint(const TaskSuite& suite) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const std::vector<std::int32_t>& v) {
        for (auto x : v) {
            h ^= static_cast<std::uint32_t>(x);
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& b : suite.backward) {
        mix(b.tokens);
        mix(b.labels);
    }
    for (const auto& s : suite.stream) {
        mix(s.test.tokens);
        mix(s.test.labels);
    }
    return h;
}

}  // namespace fcl

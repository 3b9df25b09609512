#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fcl {

// A synthetic language: a contiguous block of input tokens and a bijection
// onto a contiguous block of output labels.
struct Language {
    std::string id;
    std::int32_t vocab_begin = 0;  // half-open [vocab_begin, vocab_end)
    std::int32_t vocab_end = 0;
    std::int32_t out_begin = 0;
    std::vector<std::int32_t> mapping;  // mapping[i] = label of token vocab_begin + i
    std::uint64_t seed = 0;

    std::int32_t size() const { return vocab_end - vocab_begin; }
    bool contains(std::int32_t token) const { return token >= vocab_begin && token < vocab_end; }
    std::int32_t map(std::int32_t token) const { return mapping.at(std::size_t(token - vocab_begin)); }
};

// Input-side permutation of one language's tokens; tokens outside the
// perturbed subset are fixed points. Labels become pi(sigma(x)).
struct Perturbation {
    std::vector<std::int32_t> sigma;  // sigma[i] = index of the token whose label x_i takes
    double rho = 0.0;

    std::int32_t apply(const Language& lang, std::int32_t token) const;
    std::size_t moved() const;
};

struct CodeSwitchTask {
    std::string id;
    std::size_t lang_a = 0;  // indices into the language list
    std::size_t lang_b = 0;
    double mix_ratio = 0.5;  // probability a position is drawn from lang_a
    Perturbation perturb_a;
    Perturbation perturb_b;
    std::uint64_t seed = 0;
};

enum class Split { train, heldout, test };
const char* split_name(Split s);

struct Dataset {
    std::string id;
    Split split = Split::train;
    std::size_t seq_len = 0;
    std::vector<std::int32_t> tokens;  // size() * seq_len, row-major
    std::vector<std::int32_t> labels;

    std::size_t size() const { return seq_len ? tokens.size() / seq_len : 0; }
    bool empty() const { return tokens.empty(); }
};

std::vector<Language> make_languages(int n_languages, int vocab_per_lang, int vocab_in, int vocab_out,
                                     std::uint64_t seed);

// Cyclic derangement over round(rho * size) tokens of the language (a single
// moved token is impossible, so such sizes are rounded up to two).
Perturbation make_perturbation(const Language& lang, double rho, std::uint64_t seed);

Dataset sample_monolingual(const Language& lang, std::size_t n, std::size_t len, std::uint64_t seed);
Dataset sample_codeswitch(const CodeSwitchTask& task, const std::vector<Language>& langs, std::size_t n,
                          std::size_t len, std::uint64_t seed);

struct StreamTaskSpec {
    std::size_t lang_a = 0;
    std::size_t lang_b = 1;
    double mix_ratio = 0.5;
    double rho = 0.25;
    std::size_t train_samples = 1000;
};

struct SuiteConfig {
    int n_languages = 8;
    int vocab_per_lang = 24;
    int vocab_in = 256;
    int vocab_out = 192;
    std::size_t seq_len = 8;
    std::size_t pretrain_samples_per_lang = 1000;
    std::size_t test_samples = 200;
    double heldout_fraction = 0.1;
    std::vector<StreamTaskSpec> stream = default_stream();
    std::uint64_t seed = 1;

    static std::vector<StreamTaskSpec> default_stream();
    void validate() const;
};

struct StreamDataset {
    CodeSwitchTask task;
    Dataset train;
    Dataset heldout;
    Dataset test;
};

struct TaskSuite {
    SuiteConfig config;
    std::vector<Language> languages;
    Dataset pretrain;                   // monolingual mixture, shuffled
    std::vector<Dataset> pretrain_heldout;
    std::vector<StreamDataset> stream;  // forward suite: stream[i].test
    std::vector<Dataset> backward;      // one monolingual test set per language

    std::vector<std::size_t> stream_languages() const;  // sorted, unique
    std::vector<std::size_t> untouched_languages() const;
    std::string manifest() const;
};

// Every sample in the suite is unique across all splits and datasets.
TaskSuite make_suite(const SuiteConfig& cfg);

// Stable identity of a suite's test sets, used to refuse joining reports
// produced on different benchmarks.
std::uint64_t suite_fingerprint(const TaskSuite& suite);

}  // namespace fcl

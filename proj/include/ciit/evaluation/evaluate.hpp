#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "ciit/evaluation/metrics.hpp"
#include "ciit/evaluation/predict.hpp"
#include "ciit/evaluation/reps.hpp"

namespace ciit::eval {

struct EvalOptions {
    bool oov_substitute = false;
    std::size_t rep_sample = 1000;  // training inputs averaged into character representations
    std::uint64_t seed = 0;
    int batch = 64;
};

struct EvalResult {
    MetricReport report;
    std::vector<std::string> predictions;
};

/// First `n` training inputs of a seeded shuffle.
inline std::vector<std::string> sample_inputs(const std::vector<tasks::Example>& xs, std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);
    idx.resize(std::min(n, idx.size()));
    std::vector<std::string> out;
    for (auto i : idx) out.push_back(xs[i].input);
    return out;
}

/// Greedy-decode a split and score it. With oov_substitute, unseen source
/// tokens are replaced by averaged character representations (`train` is
/// then required: it defines the seen tokens and the averaging sample).
inline EvalResult evaluate(const model::Transformer& m, const Codec& codec, const tasks::CausalProgram& p, const std::string& split,
                           const std::vector<tasks::Example>& xs, const std::vector<tasks::Example>& train, const EvalOptions& opt) {
    if (xs.empty()) throw ConfigError("split '" + split + "' is empty");
    if (codec.vocab->size() != m.config().src_vocab || codec.vocab->size() != m.config().tgt_vocab)
        throw ConfigError("vocabulary of " + std::to_string(codec.vocab->size()) + " tokens does not match the model");
    std::vector<PreparedInput> prepared;
    prepared.reserve(xs.size());
    if (opt.oov_substitute) {
        if (train.empty()) throw ConfigError("OOV substitution needs the training split");
        const auto seen = seen_tokens(codec, train);
        const auto reps = extract_char_reps(m, codec, sample_inputs(train, opt.rep_sample, opt.seed), opt.batch);
        Rng rng(opt.seed ^ 0x5bd1e995ull);
        for (const auto& x : xs) prepared.push_back(oov_substitute(m, codec, x.input, seen, reps, rng));
    } else {
        for (const auto& x : xs) prepared.push_back(prepare(codec, x.input));
    }
    EvalResult r;
    r.predictions = predict_prepared(m, codec, prepared, opt.batch);
    r.report = score(p, split, xs, r.predictions);
    return r;
}

}  // namespace ciit::eval

#pragma once

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ciit/errors.hpp"
#include "ciit/tasks/dataset.hpp"
#include "ciit/tasks/program.hpp"

namespace ciit::eval {

/// Counts behind the reported fractions. Relaxed counts equal exact counts
/// for tasks without a relaxed rule; match counts are Word Search only.
struct MetricReport {
    std::string task;
    std::string split;
    std::size_t n = 0;
    std::size_t exact = 0;
    std::size_t relaxed = 0;
    std::size_t char_match = 0;
    std::size_t syn_match = 0;
    bool word_search = false;

    static double frac(std::size_t k, std::size_t n) { return n ? static_cast<double>(k) / static_cast<double>(n) : 0.0; }
    double sequence_accuracy() const { return frac(exact, n); }
    double relaxed_accuracy() const { return frac(relaxed, n); }
    double character_match() const { return frac(char_match, n); }
    double synonym_match() const { return frac(syn_match, n); }

    std::string line() const {
        nlohmann::ordered_json j = {{"task", task},
                                    {"split", split},
                                    {"n", n},
                                    {"sequence_accuracy", sequence_accuracy()},
                                    {"relaxed_accuracy", relaxed_accuracy()}};
        if (word_search) {
            j["character_match"] = character_match();
            j["synonym_match"] = synonym_match();
        }
        return j.dump();
    }

    std::string table() const {
        std::ostringstream os;
        os << std::fixed << std::setprecision(2);
        os << std::left << std::setw(12) << "task" << std::setw(12) << "split" << std::right << std::setw(7) << "n" << std::setw(9) << "acc"
           << std::setw(9) << "relaxed";
        if (word_search) os << std::setw(9) << "char" << std::setw(9) << "syn";
        os << '\n'
           << std::left << std::setw(12) << task << std::setw(12) << split << std::right << std::setw(7) << n << std::setw(9)
           << 100 * sequence_accuracy() << std::setw(9) << 100 * relaxed_accuracy();
        if (word_search) os << std::setw(9) << 100 * character_match() << std::setw(9) << 100 * synonym_match();
        os << '\n';
        return os.str();
    }
};

/// Synonym match: the prediction names the definition's synset or is one of
/// its hyponyms.
inline bool synonym_match(const tasks::Lexicon& lex, int synset, const std::string& pred) {
    if (synset < 0) return false;
    const auto& s = lex.synsets[static_cast<std::size_t>(synset)];
    return pred == s.name || std::find(s.hyponyms.begin(), s.hyponyms.end(), pred) != s.hyponyms.end();
}

/// Character match: the prediction is a non-empty substring of the reversed grid.
inline bool character_match(const std::string& grid, const std::string& pred) {
    return !pred.empty() && tasks::reversed(grid).find(pred) != std::string::npos;
}

inline bool relaxed_correct(const tasks::CausalProgram& p, const tasks::Example& ex, const std::string& pred) {
    if (pred == ex.output) return true;
    const auto& lex = p.lexicon();
    switch (p.task()) {
        case tasks::Task::unscramble:
            return pred != ex.input && lex.contains(pred) && tasks::sorted_letters(pred) == tasks::sorted_letters(ex.output);
        case tasks::Task::spelling: {
            const auto& c = p.candidates(ex.input);
            return std::find(c.begin(), c.end(), pred) != c.end();
        }
        default:
            return false;
    }
}

inline MetricReport score(const tasks::CausalProgram& p, const std::string& split, const std::vector<tasks::Example>& xs,
                          const std::vector<std::string>& preds) {
    if (xs.size() != preds.size()) throw DimensionError(std::to_string(preds.size()) + " predictions for " + std::to_string(xs.size()) + " items");
    MetricReport r;
    r.task = tasks::task_name(p.task());
    r.split = split;
    r.n = xs.size();
    r.word_search = p.task() == tasks::Task::word_search;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const bool ok = preds[i] == xs[i].output;
        r.exact += ok;
        r.relaxed += relaxed_correct(p, xs[i], preds[i]);
        if (r.word_search) {
            const auto [synset, off] = p.parse_search(xs[i].input);
            r.char_match += ok || character_match(xs[i].input.substr(off), preds[i]);
            r.syn_match += ok || synonym_match(p.lexicon(), synset, preds[i]);
        }
    }
    return r;
}

}  // namespace ciit::eval

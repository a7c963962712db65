#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ciit/errors.hpp"
#include "ciit/tasks/lexicon.hpp"

namespace ciit::tasks {

enum class Task { reversal, unit_conversion, unscramble, spelling, contextual_spelling, word_search };

inline const char* task_name(Task t) {
    switch (t) {
        case Task::reversal: return "reversal";
        case Task::unit_conversion: return "unit";
        case Task::unscramble: return "unscramble";
        case Task::spelling: return "spelling";
        case Task::contextual_spelling: return "contextual";
        case Task::word_search: return "wordsearch";
    }
    return "?";
}

inline Task parse_task(const std::string& s) {
    for (Task t : {Task::reversal, Task::unit_conversion, Task::unscramble, Task::spelling,
                   Task::contextual_spelling, Task::word_search}) {
        if (s == task_name(t)) return t;
    }
    if (s == "unit-conversion" || s == "unit_conversion") return Task::unit_conversion;
    if (s == "word-search" || s == "word_search") return Task::word_search;
    if (s == "spelling-context" || s == "contextual-spelling") return Task::contextual_spelling;
    throw ConfigError("unknown task '" + s +
                      "' (expected reversal, unit, unscramble, spelling, contextual or wordsearch)");
}

inline std::string sorted_letters(std::string s) {
    std::sort(s.begin(), s.end());
    return s;
}

inline std::string reversed(std::string s) {
    std::reverse(s.begin(), s.end());
    return s;
}

enum class ErrorRule { swap, keyboard, deletion, repetition };

inline const char* rule_name(ErrorRule r) {
    switch (r) {
        case ErrorRule::swap: return "swap";
        case ErrorRule::keyboard: return "keyboard";
        case ErrorRule::deletion: return "deletion";
        case ErrorRule::repetition: return "repetition";
    }
    return "?";
}

/// Every string reachable from `w` by one application of `rule`, excluding `w`.
inline std::vector<std::string> corruptions(const std::string& w, ErrorRule rule, const Keyboard& kb) {
    std::vector<std::string> out;
    const std::size_t n = w.size();
    switch (rule) {
        case ErrorRule::swap:
            for (std::size_t i = 0; i + 1 < n; ++i) {
                if (w[i] == w[i + 1]) continue;
                std::string s = w;
                std::swap(s[i], s[i + 1]);
                out.push_back(s);
            }
            break;
        case ErrorRule::keyboard:
            for (std::size_t i = 0; i < n; ++i) {
                auto it = kb.neighbors.find(w[i]);
                if (it == kb.neighbors.end()) continue;
                for (char c : it->second) {
                    std::string s = w;
                    s[i] = c;
                    out.push_back(s);
                }
            }
            break;
        case ErrorRule::deletion:
            if (n < 3) break;
            for (std::size_t i = 0; i < n; ++i) out.push_back(w.substr(0, i) + w.substr(i + 1));
            break;
        case ErrorRule::repetition:
            for (std::size_t i = 0; i < n; ++i) out.push_back(w.substr(0, i + 1) + w.substr(i));
            break;
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Unit table: name -> (family, power of ten relative to the family base).
inline std::optional<std::pair<int, int>> unit_info(const std::string& u) {
    static const std::map<std::string, std::pair<int, int>> table{
        {"cm", {0, -2}},     {"centimeter", {0, -2}}, {"m", {0, 0}},         {"meter", {0, 0}},
        {"km", {0, 3}},      {"kilometer", {0, 3}},   {"million", {1, 6}},   {"billion", {1, 9}},
        {"trillion", {1, 12}},
    };
    auto it = table.find(u);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

/// Canonical decimal: no leading zeros before the integer digit, no trailing
/// zeros after the point, no bare point, "0" for zero.
inline std::string canonical_decimal(std::string int_part, std::string frac_part) {
    const auto nz = int_part.find_first_not_of('0');
    int_part = nz == std::string::npos ? "0" : int_part.substr(nz);
    while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();
    return frac_part.empty() ? int_part : int_part + "." + frac_part;
}

/// Multiply a D+('.'D+)? literal by 10^shift, exactly, by moving the point.
inline std::string shift_decimal(const std::string& number, int shift) {
    const auto dot = number.find('.');
    const std::string ip = number.substr(0, dot);
    const std::string fp = dot == std::string::npos ? "" : number.substr(dot + 1);
    std::string digits = ip + fp;
    long point = static_cast<long>(ip.size()) + shift;
    if (point < 0) {
        digits.insert(0, static_cast<std::size_t>(-point), '0');
        point = 0;
    }
    if (point > static_cast<long>(digits.size())) digits.append(static_cast<std::size_t>(point) - digits.size(), '0');
    return canonical_decimal(digits.substr(0, static_cast<std::size_t>(point)), digits.substr(static_cast<std::size_t>(point)));
}

struct ParsedUnit {
    std::size_t number_pos = 0;  // offset of the number literal in the input
    std::string number;
    std::string from, to;
};

inline ParsedUnit parse_unit_query(const std::string& x) {
    ParsedUnit p;
    std::string rest = x;
    if (rest.rfind("convert ", 0) == 0) {
        p.number_pos = 8;
        rest = rest.substr(8);
    }
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= rest.size(); ++i) {
        if (i == rest.size() || rest[i] == ' ') {
            parts.push_back(rest.substr(start, i - start));
            start = i + 1;
        }
    }
    if (parts.size() != 4 || parts[2] != "to") throw GrammarError("expected '[convert] <number> <unit> to <unit>' in '" + x + "'");
    p.number = parts[0];
    p.from = parts[1];
    p.to = parts[3];
    // D+('.'D+)?
    const auto dot = p.number.find('.');
    auto all_digits = [](const std::string& s) {
        return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
    };
    const bool ok = dot == std::string::npos ? all_digits(p.number)
                                             : all_digits(p.number.substr(0, dot)) && all_digits(p.number.substr(dot + 1));
    if (!ok) throw GrammarError("malformed number '" + p.number + "'");
    const auto f = unit_info(p.from), t = unit_info(p.to);
    if (!f) throw GrammarError("unknown unit '" + p.from + "'");
    if (!t) throw GrammarError("unknown unit '" + p.to + "'");
    if (f->first != t->first) throw GrammarError("cannot convert " + p.from + " to " + p.to);
    return p;
}

struct ProgramOptions {
    /// Letters a Reversal input may contain; also its intervention values.
    std::string reversal_alphabet = "abcdefghij";
    /// Intervention values for Unit Conversion number characters.
    std::string unit_values = "0123456789.";
};

/// (variable position in the input string, new character value)
using Assignment = std::vector<std::pair<int, char>>;

/// Deterministic high-level model of one task. Variables are input character
/// positions; `variables()` lists the ones the program exposes.
class CausalProgram {
public:
    CausalProgram(Task task, const Lexicon& lex = Lexicon::bundled(), const Keyboard& kb = Keyboard::bundled(),
                  ProgramOptions opt = {})
        : task_(task), lex_(&lex), kb_(&kb), opt_(std::move(opt)) {
        if (task_ == Task::unscramble) {
            for (const auto& w : lex.words) anagrams_[sorted_letters(w)].push_back(w);
        }
        if (task_ == Task::spelling || task_ == Task::contextual_spelling) {
            for (const auto& w : lex.words) {
                for (ErrorRule r : {ErrorRule::swap, ErrorRule::keyboard, ErrorRule::deletion, ErrorRule::repetition}) {
                    for (const auto& c : corruptions(w, r, kb)) {
                        auto& v = corrections_[c];
                        if (std::find(v.begin(), v.end(), w) == v.end()) v.push_back(w);
                    }
                }
            }
            for (auto& [k, v] : corrections_) std::sort(v.begin(), v.end());
        }
    }

    Task task() const { return task_; }
    const Lexicon& lexicon() const { return *lex_; }
    const Keyboard& keyboard() const { return *kb_; }
    const ProgramOptions& options() const { return opt_; }

    /// Characters an intervention may assign.
    std::string value_alphabet() const {
        if (task_ == Task::reversal) return opt_.reversal_alphabet;
        if (task_ == Task::unit_conversion) return opt_.unit_values;
        return "abcdefghijklmnopqrstuvwxyz";
    }

    /// Positions of the character variables of a well-formed input.
    std::vector<int> variables(const std::string& x) const {
        std::vector<int> out;
        auto range = [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) out.push_back(static_cast<int>(i));
        };
        switch (task_) {
            case Task::reversal:
            case Task::unscramble:
            case Task::spelling:
                check_letters(x);
                range(0, x.size());
                break;
            case Task::unit_conversion: {
                const auto p = parse_unit_query(x);
                range(p.number_pos, p.number_pos + p.number.size());
                break;
            }
            case Task::contextual_spelling: {
                const auto [t, lo, hi] = parse_context(x);
                range(lo, hi);
                break;
            }
            case Task::word_search: {
                const auto [s, lo] = parse_search(x);
                range(lo, x.size());
                break;
            }
        }
        return out;
    }

    /// Output for a well-formed input, or nullopt when it is Undefined.
    std::optional<std::string> eval(const std::string& x) const {
        switch (task_) {
            case Task::reversal:
                check_letters(x);
                return reversed(x);
            case Task::unit_conversion: {
                const auto p = parse_unit_query(x);
                return shift_decimal(p.number, unit_info(p.from)->second - unit_info(p.to)->second);
            }
            case Task::unscramble: {
                check_letters(x);
                auto it = anagrams_.find(sorted_letters(x));
                if (it == anagrams_.end() || it->second.size() != 1) return std::nullopt;
                return it->second.front();
            }
            case Task::spelling: {
                check_letters(x);
                const auto& c = candidates(x);
                if (c.size() != 1) return std::nullopt;
                return c.front();
            }
            case Task::contextual_spelling: {
                const auto [t, lo, hi] = parse_context(x);
                const std::string word = x.substr(lo, hi - lo);
                const std::string& tag = lex_->templates[static_cast<std::size_t>(t)].tag;
                std::optional<std::string> pick;
                for (const auto& c : candidates(word)) {
                    if (lex_->tag(c) != tag) continue;
                    if (pick) return std::nullopt;
                    pick = c;
                }
                if (!pick) return std::nullopt;
                return x.substr(0, lo) + *pick + x.substr(hi);
            }
            case Task::word_search: {
                const auto [s, lo] = parse_search(x);
                const std::string grid = x.substr(lo);
                std::optional<std::string> pick;
                for (const auto& h : lex_->synsets[static_cast<std::size_t>(s)].hyponyms) {
                    if (grid.find(reversed(h)) == std::string::npos) continue;
                    if (pick) return std::nullopt;
                    pick = h;
                }
                return pick;
            }
        }
        return std::nullopt;
    }

    /// The input with each assigned position overwritten.
    std::string apply(const std::string& x, const Assignment& a) const {
        const auto vars = variables(x);
        std::string out = x;
        for (const auto& [pos, c] : a) {
            if (!std::binary_search(vars.begin(), vars.end(), pos))
                throw IndexError("position " + std::to_string(pos) + " is not a variable of '" + x + "'");
            out[static_cast<std::size_t>(pos)] = c;
        }
        return out;
    }

    /// Evaluate with substituted variable values. Leaving the input grammar is
    /// Undefined, not an error.
    std::optional<std::string> intervene(const std::string& x, const Assignment& a) const {
        const std::string y = apply(x, a);
        try {
            return eval(y);
        } catch (const GrammarError&) {
            return std::nullopt;
        }
    }

    /// Lexicon words one error rule away from `s`; empty when `s` is itself a word.
    const std::vector<std::string>& candidates(const std::string& s) const {
        static const std::vector<std::string> none;
        if (lex_->contains(s)) return none;
        auto it = corrections_.find(s);
        return it == corrections_.end() ? none : it->second;
    }

    const std::vector<std::string>& anagram_class(const std::string& s) const {
        static const std::vector<std::string> none;
        auto it = anagrams_.find(sorted_letters(s));
        return it == anagrams_.end() ? none : it->second;
    }

    /// (template index, slot begin, slot end) of a contextual input.
    std::tuple<int, std::size_t, std::size_t> parse_context(const std::string& x) const {
        std::optional<std::tuple<int, std::size_t, std::size_t>> found;
        for (std::size_t i = 0; i < lex_->templates.size(); ++i) {
            const auto& t = lex_->templates[i];
            const std::string pre = t.left + " ", post = " " + t.right;
            if (x.size() <= pre.size() + post.size()) continue;
            if (x.compare(0, pre.size(), pre) != 0) continue;
            if (x.compare(x.size() - post.size(), post.size(), post) != 0) continue;
            const std::size_t lo = pre.size(), hi = x.size() - post.size();
            const std::string slot = x.substr(lo, hi - lo);
            if (!std::all_of(slot.begin(), slot.end(), [](char c) { return c >= 'a' && c <= 'z'; })) continue;
            if (found) throw GrammarError("'" + x + "' matches more than one context template");
            found = std::make_tuple(static_cast<int>(i), lo, hi);
        }
        if (!found) throw GrammarError("'" + x + "' matches no context template");
        return *found;
    }

    /// (synset index, grid offset) of a word-search input "<definition>: <grid>".
    std::pair<int, std::size_t> parse_search(const std::string& x) const {
        const auto sep = x.find(": ");
        if (sep == std::string::npos) throw GrammarError("expected '<definition>: <grid>' in '" + x + "'");
        const int s = lex_->synset_for(x.substr(0, sep));
        if (s < 0) throw GrammarError("unknown definition '" + x.substr(0, sep) + "'");
        const std::string grid = x.substr(sep + 2);
        if (grid.empty() || !std::all_of(grid.begin(), grid.end(), [](char c) { return c >= 'a' && c <= 'z'; }))
            throw GrammarError("grid must be lowercase letters in '" + x + "'");
        return {s, sep + 2};
    }

private:
    void check_letters(const std::string& x) const {
        if (x.empty()) throw GrammarError("empty input");
        const std::string allowed = task_ == Task::reversal ? opt_.reversal_alphabet : "abcdefghijklmnopqrstuvwxyz";
        for (char c : x) {
            if (allowed.find(c) == std::string::npos)
                throw GrammarError("character '" + std::string(1, c) + "' not allowed in '" + x + "'");
        }
    }

    Task task_;
    const Lexicon* lex_;
    const Keyboard* kb_;
    ProgramOptions opt_;
    std::unordered_map<std::string, std::vector<std::string>> anagrams_;
    std::unordered_map<std::string, std::vector<std::string>> corrections_;
};

}  // namespace ciit::tasks

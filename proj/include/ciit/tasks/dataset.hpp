#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ciit/errors.hpp"
#include "ciit/tasks/program.hpp"

namespace ciit::tasks {

struct Example {
    Task task = Task::reversal;
    std::string split;
    std::string input;
    std::string output;
    std::vector<std::pair<std::string, std::string>> meta;

    std::string get(const std::string& key, const std::string& fallback = "") const {
        for (const auto& [k, v] : meta)
            if (k == key) return v;
        return fallback;
    }
};

inline std::string encode_meta(const std::vector<std::pair<std::string, std::string>>& meta) {
    std::string out;
    for (const auto& [k, v] : meta) {
        for (const std::string& s : {k, v}) {
            if (s.find_first_of("&=\t\n") != std::string::npos) throw ConfigError("metadata field '" + s + "' contains a reserved character");
        }
        if (!out.empty()) out += '&';
        out += k + "=" + v;
    }
    return out;
}

inline std::vector<std::pair<std::string, std::string>> decode_meta(const std::string& s) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream is(s);
    std::string kv;
    while (std::getline(is, kv, '&')) {
        if (kv.empty()) continue;
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw DataError("metadata entry '" + kv + "' has no '='");
        out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return out;
}

inline std::string format_example(const Example& e) {
    return std::string(task_name(e.task)) + '\t' + e.split + '\t' + e.input + '\t' + e.output + '\t' + encode_meta(e.meta);
}

inline Example parse_example(const std::string& line) {
    std::vector<std::string> f;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, '\t')) f.push_back(cur);
    if (f.size() == 4) f.emplace_back();
    if (f.size() != 5) throw DataError("dataset line needs 5 tab-separated fields: '" + line + "'");
    return {parse_task(f[0]), f[1], f[2], f[3], decode_meta(f[4])};
}

inline void write_examples(const std::string& path, const std::vector<Example>& xs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw PathError("cannot write " + path);
    for (const auto& e : xs) f << format_example(e) << '\n';
}

inline std::vector<Example> read_examples(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw PathError("cannot read " + path);
    std::vector<Example> out;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) out.push_back(parse_example(line));
    }
    return out;
}

/// Oracle pass over a dataset: every record must agree with the program and
/// satisfy its task's structural invariant. Returns one message per violation.
inline std::vector<std::string> audit(const CausalProgram& p, const std::vector<Example>& xs) {
    std::vector<std::string> bad;
    auto fail = [&](const Example& e, const std::string& why) { bad.push_back(e.input + ": " + why); };
    for (const auto& e : xs) {
        std::optional<std::string> y;
        try {
            y = p.eval(e.input);
        } catch (const GrammarError& err) {
            fail(e, err.what());
            continue;
        }
        if (!y) {
            fail(e, "program output is undefined");
            continue;
        }
        if (*y != e.output) {
            fail(e, "label '" + e.output + "' but program gives '" + *y + "'");
            continue;
        }
        switch (p.task()) {
            case Task::reversal:
                if (p.eval(*y) != e.input) fail(e, "reversal is not an involution");
                break;
            case Task::unit_conversion: {
                const auto q = parse_unit_query(e.input);
                const auto back = p.eval("convert " + *y + " " + q.to + " to " + q.from);
                if (back != shift_decimal(q.number, 0)) fail(e, "round trip does not restore the number");
                break;
            }
            case Task::unscramble:
                if (sorted_letters(*y) != sorted_letters(e.input)) fail(e, "output is not an anagram");
                break;
            case Task::spelling: {
                bool one_rule = false;
                for (ErrorRule r : {ErrorRule::swap, ErrorRule::keyboard, ErrorRule::deletion, ErrorRule::repetition}) {
                    const auto c = corruptions(*y, r, p.keyboard());
                    one_rule = one_rule || std::binary_search(c.begin(), c.end(), e.input);
                }
                if (!one_rule) fail(e, "input is not one error away from the output");
                break;
            }
            case Task::contextual_spelling:
                break;
            case Task::word_search: {
                const auto [s, lo] = p.parse_search(e.input);
                if (e.input.substr(lo).find(reversed(*y)) == std::string::npos) fail(e, "label not hidden in grid");
                break;
            }
        }
    }
    return bad;
}

}  // namespace ciit::tasks

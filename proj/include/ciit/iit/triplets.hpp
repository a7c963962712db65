#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ciit/errors.hpp"
#include "ciit/rng.hpp"
#include "ciit/tasks/dataset.hpp"
#include "ciit/tasks/program.hpp"

namespace ciit::iit {

/// Base character position receives the character at a source position.
struct SlotPair {
    int base_pos = 0;
    int source_pos = 0;

    friend bool operator==(const SlotPair&, const SlotPair&) = default;
};

struct Triplet {
    std::string base;
    std::string source;
    std::vector<SlotPair> pairs;
    std::string label;  // counterfactual output y_inv
};

struct IITDataConfig {
    std::size_t count = 0;  // 0 means 5 x |D|
    int max_intervened = 8;
    int retry_budget = 1000;  // attempts per base before it is abandoned
    /// Abandoned bases tolerated, as a fraction of emitted triplets.
    double max_abandoned_fraction = 0.25;
    std::uint64_t seed = 0;
};

struct TripletDiagnostics {
    std::size_t attempts = 0;
    std::size_t undefined = 0;   // step 3: intervened input outside the program's domain
    std::size_t no_source = 0;   // step 4: no example carries every value
    std::size_t abandoned = 0;   // bases that used up their retry budget

    std::string str() const {
        std::ostringstream os;
        os << "attempts=" << attempts << " undefined=" << undefined << " no_source=" << no_source
           << " abandoned_bases=" << abandoned;
        return os.str();
    }
};

inline tasks::Assignment as_values(const Triplet& t) {
    tasks::Assignment a;
    for (const auto& p : t.pairs) a.emplace_back(p.base_pos, t.source[static_cast<std::size_t>(p.source_pos)]);
    return a;
}

/// Empty when the triplet satisfies every type invariant, else the reason.
inline std::string check_triplet(const tasks::CausalProgram& prog, const Triplet& t, int max_intervened = 8) {
    if (t.pairs.empty() || static_cast<int>(t.pairs.size()) > max_intervened) return "assignment size out of range";
    std::vector<int> vars, svars;
    try {
        vars = prog.variables(t.base);
        svars = prog.variables(t.source);
    } catch (const GrammarError& e) {
        return e.what();
    }
    std::vector<int> seen;
    for (const auto& p : t.pairs) {
        if (!std::binary_search(vars.begin(), vars.end(), p.base_pos)) return "base position " + std::to_string(p.base_pos) + " is not a variable";
        if (!std::binary_search(svars.begin(), svars.end(), p.source_pos))
            return "source position " + std::to_string(p.source_pos) + " is not a variable";
        if (std::find(seen.begin(), seen.end(), p.base_pos) != seen.end()) return "base position assigned twice";
        seen.push_back(p.base_pos);
    }
    const auto y = prog.intervene(t.base, as_values(t));
    if (!y) return "intervened base is undefined";
    if (*y != t.label) return "label '" + t.label + "' but oracle gives '" + *y + "'";
    return "";
}

namespace detail {

/// Bit per value-alphabet character present at a variable position.
inline std::uint64_t value_mask(const std::string& alphabet, const std::string& x, const std::vector<int>& vars) {
    std::uint64_t m = 0;
    for (int v : vars) {
        const auto i = alphabet.find(x[static_cast<std::size_t>(v)]);
        if (i != std::string::npos) m |= std::uint64_t{1} << i;
    }
    return m;
}

}  // namespace detail

/// Appendix A.1: (1) draw a base, (2) draw an intervened subset and values,
/// (3) resolve y_inv with the causal program, (4) find a source carrying all
/// the values. Undefined or source-less draws go back to (2) until the base's
/// retry budget is spent, then a fresh base is drawn.
inline std::vector<Triplet> sample_triplets(const std::vector<tasks::Example>& D, const tasks::CausalProgram& prog,
                                            const IITDataConfig& cfg, TripletDiagnostics* diag_out = nullptr) {
    if (D.empty()) throw ConfigError("cannot sample triplets from an empty dataset");
    if (cfg.retry_budget < 1) throw ConfigError("retry_budget must be at least 1");
    if (cfg.max_intervened < 1) throw ConfigError("max_intervened must be at least 1");
    const std::size_t n = cfg.count ? cfg.count : 5 * D.size();
    const std::string alphabet = prog.value_alphabet();
    if (alphabet.size() > 64) throw ConfigError("value alphabet larger than 64 symbols");

    std::vector<std::vector<int>> vars(D.size());
    std::vector<std::uint64_t> masks(D.size());
    for (std::size_t i = 0; i < D.size(); ++i) {
        vars[i] = prog.variables(D[i].input);
        masks[i] = detail::value_mask(alphabet, D[i].input, vars[i]);
    }
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(D.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    TripletDiagnostics diag;
    std::vector<Triplet> out;
    out.reserve(n);
    while (out.size() < n) {
        const std::size_t b = rng.below(D.size());
        const auto& x = D[b].input;
        const auto& bv = vars[b];
        bool done = false;
        for (int attempt = 0; attempt < cfg.retry_budget && !done && !bv.empty(); ++attempt) {
            ++diag.attempts;
            const int k = rng.range(1, std::min<int>(cfg.max_intervened, static_cast<int>(bv.size())));
            std::vector<int> chosen = bv;
            rng.shuffle(chosen);
            chosen.resize(static_cast<std::size_t>(k));
            std::sort(chosen.begin(), chosen.end());
            tasks::Assignment a;
            std::uint64_t need = 0;
            for (int pos : chosen) {
                const auto vi = rng.below(alphabet.size());
                a.emplace_back(pos, alphabet[vi]);
                need |= std::uint64_t{1} << vi;
            }
            const auto y = prog.intervene(x, a);
            if (!y) {
                ++diag.undefined;
                continue;
            }
            // first match in a shuffled index, starting at a random offset
            const std::size_t start = rng.below(D.size());
            std::size_t src = D.size();
            for (std::size_t j = 0; j < D.size(); ++j) {
                const std::size_t cand = order[(start + j) % D.size()];
                if ((masks[cand] & need) == need) {
                    src = cand;
                    break;
                }
            }
            if (src == D.size()) {
                ++diag.no_source;
                continue;
            }
            Triplet t{x, D[src].input, {}, *y};
            const auto& sx = D[src].input;
            for (const auto& [pos, c] : a) {
                std::vector<int> where;
                for (int v : vars[src])
                    if (sx[static_cast<std::size_t>(v)] == c) where.push_back(v);
                t.pairs.push_back({pos, where[rng.below(where.size())]});
            }
            out.push_back(std::move(t));
            done = true;
        }
        if (!done) {
            ++diag.abandoned;
            if (static_cast<double>(diag.abandoned) > cfg.max_abandoned_fraction * static_cast<double>(std::max<std::size_t>(out.size(), 100))) {
                if (diag_out) *diag_out = diag;
                throw GenerationError("retry budget exhausted for " + std::to_string(diag.abandoned) + " bases after " +
                                      std::to_string(out.size()) + " triplets (" + diag.str() + ")");
            }
        }
    }
    if (diag_out) *diag_out = diag;
    return out;
}

inline std::string format_pairs(const std::vector<SlotPair>& pairs) {
    std::string s;
    for (const auto& p : pairs) {
        if (!s.empty()) s += ',';
        s += "b:" + std::to_string(p.base_pos) + "<-s:" + std::to_string(p.source_pos);
    }
    return s;
}

inline std::vector<SlotPair> parse_pairs(const std::string& s) {
    std::vector<SlotPair> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        const auto arrow = item.find("<-s:");
        if (item.rfind("b:", 0) != 0 || arrow == std::string::npos) throw DataError("malformed assignment '" + item + "'");
        try {
            out.push_back({std::stoi(item.substr(2, arrow - 2)), std::stoi(item.substr(arrow + 4))});
        } catch (const std::exception&) {
            throw DataError("malformed assignment '" + item + "'");
        }
    }
    return out;
}

inline void write_triplets(const std::string& path, const std::vector<Triplet>& ts) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw PathError("cannot write " + path);
    for (const auto& t : ts) f << t.base << '\t' << t.source << '\t' << format_pairs(t.pairs) << '\t' << t.label << '\n';
}

inline std::vector<Triplet> read_triplets(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw PathError("cannot read " + path);
    std::vector<Triplet> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fs;
        std::string cur;
        std::istringstream is(line);
        while (std::getline(is, cur, '\t')) fs.push_back(cur);
        if (fs.size() == 3) fs.emplace_back();
        if (fs.size() != 4) throw DataError("triplet line needs 4 tab-separated fields: '" + line + "'");
        out.push_back({fs[0], fs[1], parse_pairs(fs[2]), fs[3]});
    }
    return out;
}

}  // namespace ciit::iit

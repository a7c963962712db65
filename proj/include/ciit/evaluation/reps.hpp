#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ciit/errors.hpp"
#include "ciit/evaluation/predict.hpp"
#include "ciit/model/alignment.hpp"
#include "ciit/rng.hpp"
#include "ciit/tasks/dataset.hpp"

namespace ciit::eval {

struct CharRep {
    char character = 0;
    std::string token;
    int position = 0;  // index of the character inside its token
    std::vector<float> vec;
};

/// Slot vectors at the intervention layer, one row per character occurrence,
/// plus per-character means.
struct CharRepTable {
    int slot_dim = 0;
    std::vector<CharRep> rows;
    std::map<char, std::vector<double>> sums;
    std::map<char, std::size_t> counts;

    void add(CharRep r) {
        auto& s = sums[r.character];
        if (s.empty()) s.assign(r.vec.size(), 0.0);
        for (std::size_t j = 0; j < r.vec.size(); ++j) s[j] += r.vec[j];
        ++counts[r.character];
        rows.push_back(std::move(r));
    }

    bool has(char c) const { return counts.count(c) != 0; }

    std::vector<float> average(char c) const {
        auto it = sums.find(c);
        if (it == sums.end()) throw SubstitutionError("no representation for character '" + std::string(1, c) + "'");
        const double n = static_cast<double>(counts.at(c));
        std::vector<float> out(it->second.size());
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = static_cast<float>(it->second[j] / n);
        return out;
    }
};

/// Read every character slot of `inputs` at the intervention layer.
inline CharRepTable extract_char_reps(const model::Transformer& m, const Codec& codec, const std::vector<std::string>& inputs, int batch = 64) {
    CharRepTable table;
    const int sd = m.config().slot_dim;
    table.slot_dim = sd;
    const int d = m.config().d_model;
    for (std::size_t lo = 0; lo < inputs.size(); lo += static_cast<std::size_t>(batch)) {
        const std::size_t hi = std::min(inputs.size(), lo + static_cast<std::size_t>(batch));
        model::PackedIds src;
        std::vector<tok::Encoding> encs;
        for (std::size_t i = lo; i < hi; ++i) {
            encs.push_back(codec.source(inputs[i]));
            src.add(encs.back().token_ids);
        }
        ad::Tape tape(false);
        const auto h = m.encode_prefix(tape, src);
        const auto hd = h.data();
        for (std::size_t b = 0; b < encs.size(); ++b) {
            const auto a = model::build_char_slots(encs[b], m.config());
            for (const auto& s : a.slots) {
                const float* row = hd.data() + static_cast<std::size_t>(src.segs[b].offset + s.token_step) * d + s.lo;
                table.add({s.character, encs[b].token_chars[static_cast<std::size_t>(s.token_step)], s.char_index_in_token,
                           std::vector<float>(row, row + sd)});
            }
        }
    }
    return table;
}

struct CosineStats {
    double intra = 0;  // mean cosine over pairs of equal characters
    double inter = 0;  // mean cosine over pairs of different characters
    double margin() const { return intra - inter; }
};

/// Pairwise cosine statistics over the first `max_rows` rows.
inline CosineStats cosine_stats(const CharRepTable& t, std::size_t max_rows = 3000) {
    const std::size_t n = std::min(max_rows, t.rows.size());
    std::vector<std::vector<double>> unit(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& v = t.rows[i].vec;
        double norm = 0;
        for (float x : v) norm += static_cast<double>(x) * x;
        norm = std::sqrt(norm);
        unit[i].resize(v.size());
        for (std::size_t j = 0; j < v.size(); ++j) unit[i][j] = norm > 0 ? v[j] / norm : 0.0;
    }
    double si = 0, se = 0;
    std::size_t ni = 0, ne = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) {
            double c = 0;
            for (std::size_t j = 0; j < unit[i].size(); ++j) c += unit[i][j] * unit[k][j];
            if (t.rows[i].character == t.rows[k].character) {
                si += c;
                ++ni;
            } else {
                se += c;
                ++ne;
            }
        }
    }
    return {ni ? si / ni : 0.0, ne ? se / ne : 0.0};
}

/// Token ids that occur in the training sources.
struct SeenTokens {
    std::set<int> ids;
    std::vector<std::vector<int>> by_len;  // by_len[k]: seen ids covering k characters
    std::map<int, int> lengths;

    bool contains(int id) const { return ids.count(id) != 0; }
    int length(int id) const { return lengths.at(id); }
};

inline SeenTokens seen_tokens(const Codec& codec, const std::vector<tasks::Example>& train) {
    SeenTokens s;
    for (const auto& e : train)
        for (int id : codec.source(e.input).token_ids)
            if (!codec.vocab->is_special(id)) s.ids.insert(id);
    for (int id : s.ids) {
        const auto len = codec.vocab->token(id).size();
        if (s.by_len.size() <= len) s.by_len.resize(len + 1);
        s.by_len[len].push_back(id);
        s.lengths[id] = static_cast<int>(len);
    }
    return s;
}

/// Seen tokens whose lengths add up to `n_chars`: greedy, longest fitting
/// length first, a random token of that length each time.
inline std::vector<int> donor_cover(int n_chars, const SeenTokens& seen, Rng& rng, int retries = 32) {
    for (int attempt = 0; attempt < retries; ++attempt) {
        std::vector<int> out;
        int left = n_chars;
        while (left > 0) {
            int k = std::min(left, static_cast<int>(seen.by_len.size()) - 1);
            while (k > 0 && seen.by_len[static_cast<std::size_t>(k)].empty()) --k;
            if (k <= 0) break;
            const auto& pool = seen.by_len[static_cast<std::size_t>(k)];
            out.push_back(pool[rng.below(pool.size())]);
            left -= k;
        }
        if (left == 0) return out;
    }
    throw SubstitutionError("no cover of " + std::to_string(n_chars) + " characters by seen tokens after " + std::to_string(retries) + " tries");
}

/// Replace each unseen source token by donor tokens and overwrite the donor
/// slots with the averaged vectors of the characters they stand for.
/// Inputs without unseen tokens come back unchanged.
inline PreparedInput oov_substitute(const model::Transformer& m, const Codec& codec, const std::string& x, const SeenTokens& seen,
                                    const CharRepTable& reps, Rng& rng) {
    const auto enc = codec.source(x);
    std::string missing;
    for (std::size_t t = 0; t < enc.size(); ++t) {
        if (codec.vocab->is_special(enc.token_ids[t]) || seen.contains(enc.token_ids[t])) continue;
        for (char c : enc.token_chars[t])
            if (!reps.has(c) && missing.find(c) == std::string::npos) missing += c;
    }
    if (!missing.empty()) throw SubstitutionError("characters without averaged representations: '" + missing + "'");
    PreparedInput out;
    const int sd = m.config().slot_dim;
    for (std::size_t t = 0; t < enc.size(); ++t) {
        const int id = enc.token_ids[t];
        if (codec.vocab->is_special(id) || seen.contains(id)) {
            out.ids.push_back(id);
            continue;
        }
        const std::string& chars = enc.token_chars[t];
        std::size_t c = 0;
        for (int donor : donor_cover(static_cast<int>(chars.size()), seen, rng)) {
            const int step = static_cast<int>(out.ids.size());
            out.ids.push_back(donor);
            const auto len = codec.vocab->token(donor).size();
            for (std::size_t j = 0; j < len; ++j, ++c) {
                out.refs.push_back({step, static_cast<int>(j) * sd});
                const auto avg = reps.average(chars[c]);
                out.values.insert(out.values.end(), avg.begin(), avg.end());
            }
        }
    }
    return out;
}

}  // namespace ciit::eval

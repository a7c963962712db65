#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ciit/errors.hpp"

namespace ciit::tok {

/// Lowercase letters, digits, space, period, colon, hyphen.
inline constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789 .:-";

inline bool in_alphabet(char c) { return kAlphabet.find(c) != std::string_view::npos; }

enum class Mode { subword, character };

inline const char* mode_name(Mode m) { return m == Mode::subword ? "subword" : "char"; }

inline Mode parse_mode(std::string_view s) {
    if (s == "subword") return Mode::subword;
    if (s == "char") return Mode::character;
    throw ConfigError("unknown tokenization mode '" + std::string(s) + "'");
}

/// Source/target tokenization pair. Subword, Char-S, Char-T and Char-ST are
/// the four combinations.
struct Regime {
    Mode source = Mode::subword;
    Mode target = Mode::subword;

    friend bool operator==(const Regime&, const Regime&) = default;
};

inline std::string regime_name(const Regime& r) {
    if (r.source == Mode::subword && r.target == Mode::subword) return "subword";
    if (r.source == Mode::character && r.target == Mode::subword) return "char-s";
    if (r.source == Mode::subword && r.target == Mode::character) return "char-t";
    return "char-st";
}

inline Regime parse_regime(std::string_view s) {
    if (s == "subword") return {Mode::subword, Mode::subword};
    if (s == "char-s") return {Mode::character, Mode::subword};
    if (s == "char-t") return {Mode::subword, Mode::character};
    if (s == "char-st") return {Mode::character, Mode::character};
    throw ConfigError("unknown regime '" + std::string(s) + "' (expected subword, char-s, char-t or char-st)");
}

struct Encoding {
    std::vector<int> token_ids;
    std::vector<std::string> token_chars;       // "" for specials
    std::vector<std::pair<int, int>> offsets;  // [start, end) into the raw input

    std::size_t size() const { return token_ids.size(); }
};

class SubwordVocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kNumSpecials = 4;

    /// Specials followed by the base alphabet, no merges.
    SubwordVocab() {
        for (const char* s : {"<pad>", "<s>", "</s>", "<unk>"}) add_token(s);
        for (char c : kAlphabet) add_token(std::string(1, c));
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
        return tokens_[static_cast<std::size_t>(id)];
    }
    bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }
    int id_of(const std::string& s) const {
        auto it = index_.find(s);
        return it == index_.end() ? -1 : it->second;
    }
    int char_id(char c) const { return id_of(std::string(1, c)); }
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

    /// Record a merge; the merged string becomes a token unless it already is one.
    void add_merge(const std::string& left, const std::string& right) {
        const int l = id_of(left), r = id_of(right);
        if (l < 0 || r < 0) throw ConfigError("merge (" + left + ", " + right + ") references unknown token");
        int result = id_of(left + right);
        if (result < 0) result = add_token(left + right);
        merge_rank_[pair_key(l, r)] = {static_cast<int>(merges_.size()), result};
        merges_.emplace_back(left, right);
    }

    /// Apply merges in rank order to a sequence of base-character ids.
    std::vector<int> apply_merges(std::vector<int> ids) const {
        while (ids.size() > 1) {
            int best_rank = INT32_MAX, best_result = -1;
            std::uint64_t best_key = 0;
            for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
                auto it = merge_rank_.find(pair_key(ids[i], ids[i + 1]));
                if (it != merge_rank_.end() && it->second.first < best_rank) {
                    best_rank = it->second.first;
                    best_result = it->second.second;
                    best_key = it->first;
                }
            }
            if (best_result < 0) break;
            std::vector<int> next;
            next.reserve(ids.size());
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (i + 1 < ids.size() && pair_key(ids[i], ids[i + 1]) == best_key) {
                    next.push_back(best_result);
                    ++i;
                } else {
                    next.push_back(ids[i]);
                }
            }
            ids = std::move(next);
        }
        return ids;
    }

    /// TOKENS section (id<TAB>string) then MERGES section (left<TAB>right).
    std::string serialize() const {
        std::ostringstream os;
        os << "TOKENS\n";
        for (int i = 0; i < size(); ++i) os << i << '\t' << tokens_[static_cast<std::size_t>(i)] << '\n';
        os << "MERGES\n";
        for (const auto& [l, r] : merges_) os << l << '\t' << r << '\n';
        return os.str();
    }

    static SubwordVocab deserialize(const std::string& text) {
        SubwordVocab v;
        std::istringstream is(text);
        std::string line;
        enum { none, tokens, merges } section = none;
        std::vector<std::pair<int, std::string>> listed;
        while (std::getline(is, line)) {
            if (line == "TOKENS") {
                section = tokens;
                continue;
            }
            if (line == "MERGES") {
                section = merges;
                continue;
            }
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw ConfigError("malformed vocab line '" + line + "'");
            if (section == tokens) {
                listed.emplace_back(std::stoi(line.substr(0, tab)), line.substr(tab + 1));
            } else if (section == merges) {
                v.add_merge(line.substr(0, tab), line.substr(tab + 1));
            } else {
                throw ConfigError("vocab file must start with TOKENS");
            }
        }
        if (static_cast<int>(listed.size()) != v.size()) {
            throw ConfigError("vocab TOKENS section lists " + std::to_string(listed.size()) + " tokens but merges produce " +
                              std::to_string(v.size()));
        }
        for (const auto& [id, s] : listed) {
            if (id < 0 || id >= v.size() || v.token(id) != s) {
                throw ConfigError("vocab token " + std::to_string(id) + " '" + s + "' disagrees with merge order");
            }
        }
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw PathError("cannot write " + path);
        f << serialize();
    }

    static SubwordVocab load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw PathError("cannot read " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return deserialize(ss.str());
    }

private:
    static std::uint64_t pair_key(int l, int r) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) | static_cast<std::uint32_t>(r);
    }

    int add_token(const std::string& s) {
        const int id = size();
        tokens_.push_back(s);
        index_.emplace(s, id);
        return id;
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::unordered_map<std::uint64_t, std::pair<int, int>> merge_rank_;  // pair -> (rank, result id)
};

inline void check_alphabet(std::string_view s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!in_alphabet(s[i])) {
            throw EncodingError("character '" + std::string(1, s[i]) + "' at position " + std::to_string(i) +
                                " is outside the alphabet");
        }
    }
}

struct BpeOptions {
    int vocab_size = 512;
    /// Merges producing longer tokens are skipped so every token fits the
    /// model's character slots.
    int max_token_len = 8;
};

/// Greedy BPE: repeatedly merge the most frequent adjacent pair; ties go to
/// the lexicographically smallest merged string, then the smallest left part.
/// The seed is accepted for interface symmetry; training is fully determined
/// by the corpus.
inline SubwordVocab train_bpe(const std::vector<std::string>& corpus, const BpeOptions& opt, std::uint64_t /*seed*/ = 0) {
    SubwordVocab vocab;
    if (opt.vocab_size < vocab.size()) {
        throw ConfigError("vocab_size " + std::to_string(opt.vocab_size) + " is below the " +
                          std::to_string(vocab.size()) + " specials and alphabet tokens");
    }
    std::map<std::string, long> freq;
    for (const auto& s : corpus) {
        check_alphabet(s);
        ++freq[s];
    }
    std::vector<std::vector<int>> seqs;
    std::vector<long> counts;
    for (const auto& [s, c] : freq) {
        std::vector<int> ids;
        for (char ch : s) ids.push_back(vocab.char_id(ch));
        seqs.push_back(std::move(ids));
        counts.push_back(c);
    }
    std::unordered_map<std::uint64_t, long> pair_counts;
    while (vocab.size() < opt.vocab_size) {
        pair_counts.clear();
        for (std::size_t w = 0; w < seqs.size(); ++w) {
            const auto& ids = seqs[w];
            for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
                const std::uint64_t key = (static_cast<std::uint64_t>(ids[i]) << 32) | static_cast<std::uint32_t>(ids[i + 1]);
                pair_counts[key] += counts[w];
            }
        }
        long best_count = 0;
        std::string best_merged, best_left;
        int best_l = -1, best_r = -1;
        for (const auto& [key, c] : pair_counts) {
            const int l = static_cast<int>(key >> 32), r = static_cast<int>(key & 0xffffffffu);
            if (c < best_count) continue;
            const std::string& ls = vocab.token(l);
            const std::string& rs = vocab.token(r);
            if (static_cast<int>(ls.size() + rs.size()) > opt.max_token_len) continue;
            std::string merged = ls + rs;
            if (c > best_count || merged < best_merged || (merged == best_merged && ls < best_left)) {
                best_count = c;
                best_merged = std::move(merged);
                best_left = ls;
                best_l = l;
                best_r = r;
            }
        }
        if (best_l < 0) break;
        vocab.add_merge(vocab.token(best_l), vocab.token(best_r));
        const int result = vocab.id_of(best_merged);
        for (auto& ids : seqs) {
            std::vector<int> next;
            next.reserve(ids.size());
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (i + 1 < ids.size() && ids[i] == best_l && ids[i + 1] == best_r) {
                    next.push_back(result);
                    ++i;
                } else {
                    next.push_back(ids[i]);
                }
            }
            ids = std::move(next);
        }
    }
    return vocab;
}

/// Tokenize `s` and append EOS.
inline Encoding encode(std::string_view s, Mode mode, const SubwordVocab& vocab) {
    check_alphabet(s);
    std::vector<int> ids;
    ids.reserve(s.size());
    for (char c : s) ids.push_back(vocab.char_id(c));
    if (mode == Mode::subword) ids = vocab.apply_merges(std::move(ids));
    Encoding enc;
    int pos = 0;
    for (int id : ids) {
        const std::string& t = vocab.token(id);
        enc.token_ids.push_back(id);
        enc.token_chars.push_back(t);
        enc.offsets.emplace_back(pos, pos + static_cast<int>(t.size()));
        pos += static_cast<int>(t.size());
    }
    enc.token_ids.push_back(SubwordVocab::kEos);
    enc.token_chars.emplace_back();
    enc.offsets.emplace_back(pos, pos);
    return enc;
}

/// Concatenate token strings up to the first EOS, dropping specials.
inline std::string decode(std::span<const int> ids, const SubwordVocab& vocab) {
    std::string out;
    for (int id : ids) {
        const std::string& t = vocab.token(id);  // throws on unknown ids
        if (id == SubwordVocab::kEos) break;
        if (vocab.is_special(id)) continue;
        out += t;
    }
    return out;
}

}  // namespace ciit::tok

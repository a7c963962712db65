#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "ciit/errors.hpp"
#include "ciit/rng.hpp"
#include "ciit/tasks/dataset.hpp"
#include "ciit/tasks/program.hpp"
#include "ciit/tokenization/bpe.hpp"

namespace ciit::tasks {

struct GenConfig {
    int n_train = 0;  // 0 picks the task default
    int n_dev = 0;
    int n_eval = 500;  // cap per evaluation split
    std::uint64_t seed = 0;
    int vocab_size = 512;
    int max_token_len = 8;
    int reversal_min_len = 2;
    int reversal_max_len = 6;
    /// Fraction of multi-character pool tokens withheld from training sources.
    double holdout_fraction = 0.1;
};

inline std::pair<int, int> default_sizes(Task t) {
    if (t == Task::unscramble) return {3000, 500};
    return {8000, 1000};
}

struct TaskData {
    tok::SubwordVocab vocab;
    std::vector<Example> train;
    std::vector<Example> dev;
    std::map<std::string, std::vector<Example>> splits;
};

namespace detail {

inline Example make(Task t, std::string in, std::string out, std::vector<std::pair<std::string, std::string>> meta = {}) {
    return {t, "", std::move(in), std::move(out), std::move(meta)};
}

inline std::string random_letters(Rng& rng, const std::string& alphabet, int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
    return s;
}

inline Example sample_unit(Rng& rng) {
    static const std::vector<std::vector<std::string>> families{{"cm", "m", "km"}, {"million", "billion", "trillion"}};
    const auto& fam = families[rng.below(2)];
    const std::size_t a = rng.below(3);
    std::size_t b = rng.below(2);
    if (b >= a) ++b;
    std::string number = std::to_string(rng.range(1, 9)) + random_letters(rng, "0123456789", rng.range(0, 2));
    if (rng.below(2)) number += "." + random_letters(rng, "0123456789", rng.range(1, 3));
    const std::string in = "convert " + number + " " + fam[a] + " to " + fam[b];
    const int shift = unit_info(fam[a])->second - unit_info(fam[b])->second;
    return make(Task::unit_conversion, in, shift_decimal(number, shift));
}

/// Fill `n` characters with forward lexicon words, topping up with letters.
inline std::string padding(Rng& rng, const Lexicon& lex, int n) {
    std::string out;
    for (int tries = 0; static_cast<int>(out.size()) < n && tries < 40; ++tries) {
        const auto& w = lex.words[rng.below(lex.words.size())];
        if (static_cast<int>(out.size() + w.size()) <= n) out += w;
    }
    while (static_cast<int>(out.size()) < n) out.push_back(static_cast<char>('a' + rng.below(26)));
    return out;
}

/// Word Search grid of length 16 hiding reversed `target` and `distractor`.
/// With `overlap`, the reversed words share at least one character.
inline std::optional<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> build_grid(
    Rng& rng, const Lexicon& lex, const std::string& target, const std::string& distractor, bool overlap) {
    constexpr int kGrid = 16;
    const std::string rt = reversed(target), rd = reversed(distractor);
    std::string hidden;
    int t_off = 0, d_off = 0;
    if (overlap) {
        // longest k with a suffix of one equal to a prefix of the other
        std::vector<std::pair<int, bool>> options;  // (k, target first)
        for (int k = 1; k < static_cast<int>(std::min(rt.size(), rd.size())); ++k) {
            if (rt.compare(rt.size() - k, k, rd, 0, k) == 0) options.emplace_back(k, true);
            if (rd.compare(rd.size() - k, k, rt, 0, k) == 0) options.emplace_back(k, false);
        }
        if (options.empty()) return std::nullopt;
        const auto [k, tfirst] = options[rng.below(options.size())];
        if (tfirst) {
            hidden = rt + rd.substr(k);
            d_off = static_cast<int>(rt.size()) - k;
        } else {
            hidden = rd + rt.substr(k);
            t_off = static_cast<int>(rd.size()) - k;
        }
        if (static_cast<int>(hidden.size()) > kGrid) return std::nullopt;
        const int free = kGrid - static_cast<int>(hidden.size());
        const int left = rng.range(0, free);
        const std::string grid = padding(rng, lex, left) + hidden + padding(rng, lex, free - left);
        t_off += left;
        d_off += left;
        return std::make_pair(grid, std::vector<std::pair<std::string, std::string>>{
                                        {"hidden", target + ":" + std::to_string(t_off) + "-" + std::to_string(t_off + rt.size())},
                                        {"distractor", distractor + ":" + std::to_string(d_off) + "-" + std::to_string(d_off + rd.size())}});
    }
    const int free = kGrid - static_cast<int>(rt.size() + rd.size());
    if (free < 0) return std::nullopt;
    // three gaps around the two words, split at random
    int g0 = rng.range(0, free), g1 = rng.range(0, free);
    if (g0 > g1) std::swap(g0, g1);
    const bool tfirst = rng.below(2) == 0;
    const std::string& first = tfirst ? rt : rd;
    const std::string& second = tfirst ? rd : rt;
    const std::string grid = padding(rng, lex, g0) + first + padding(rng, lex, g1 - g0) + second + padding(rng, lex, free - g1);
    const int off1 = g0, off2 = g1 + static_cast<int>(first.size());
    t_off = tfirst ? off1 : off2;
    d_off = tfirst ? off2 : off1;
    return std::make_pair(grid, std::vector<std::pair<std::string, std::string>>{
                                    {"hidden", target + ":" + std::to_string(t_off) + "-" + std::to_string(t_off + rt.size())},
                                    {"distractor", distractor + ":" + std::to_string(d_off) + "-" + std::to_string(d_off + rd.size())}});
}

/// Words that may serve as Word Search distractors: not a hyponym of any synset.
inline std::vector<std::string> distractor_words(const Lexicon& lex) {
    std::vector<std::string> out;
    for (const auto& w : lex.words)
        if (w.size() >= 3 && w.size() <= 8 && !lex.is_hyponym(w)) out.push_back(w);
    return out;
}

inline std::optional<Example> sample_word_search(Rng& rng, const CausalProgram& p, const std::vector<std::string>& distractors,
                                                 bool paraphrase, bool overlap) {
    const Lexicon& lex = p.lexicon();
    const auto& s = lex.synsets[rng.below(lex.synsets.size())];
    std::string prompt;
    if (paraphrase) {
        prompt = s.definitions[1 + rng.below(s.definitions.size() - 1)];
    } else {
        prompt = rng.below(2) ? s.name : s.definitions[0];
    }
    const auto& target = s.hyponyms[rng.below(s.hyponyms.size())];
    const auto& distractor = distractors[rng.below(distractors.size())];
    auto g = build_grid(rng, lex, target, distractor, overlap);
    if (!g) return std::nullopt;
    const std::string in = prompt + ": " + g->first;
    if (p.eval(in) != target) return std::nullopt;
    auto meta = g->second;
    meta.emplace_back("prompt", paraphrase ? "paraphrase" : (prompt == s.name ? "name" : "definition"));
    return make(Task::word_search, in, target, meta);
}

inline std::optional<Example> sample_spelling(Rng& rng, const CausalProgram& p, const std::vector<std::string>& words) {
    const auto& w = words[rng.below(words.size())];
    const auto rule = static_cast<ErrorRule>(rng.below(4));
    const auto cs = corruptions(w, rule, p.keyboard());
    if (cs.empty()) return std::nullopt;
    const auto& c = cs[rng.below(cs.size())];
    if (p.eval(c) != w) return std::nullopt;
    return make(Task::spelling, c, w, {{"rule", rule_name(rule)}});
}

inline std::optional<Example> sample_contextual(Rng& rng, const CausalProgram& p,
                                                const std::map<std::string, std::vector<std::string>>& by_tag,
                                                const std::vector<std::pair<std::string, std::string>>& dependent,
                                                bool want_dependent) {
    const Lexicon& lex = p.lexicon();
    std::string word, corrupt;
    std::string rule = "any";
    if (want_dependent) {
        const auto& [w, c] = dependent[rng.below(dependent.size())];
        word = w;
        corrupt = c;
    } else {
        const auto& t = lex.templates[rng.below(lex.templates.size())];
        const auto it = by_tag.find(t.tag);
        if (it == by_tag.end() || it->second.empty()) return std::nullopt;
        word = it->second[rng.below(it->second.size())];
        const auto r = static_cast<ErrorRule>(rng.below(4));
        const auto cs = corruptions(word, r, p.keyboard());
        if (cs.empty()) return std::nullopt;
        corrupt = cs[rng.below(cs.size())];
        rule = rule_name(r);
    }
    std::vector<const ContextTemplate*> fitting;
    for (const auto& t : lex.templates)
        if (t.tag == lex.tag(word)) fitting.push_back(&t);
    if (fitting.empty()) return std::nullopt;
    const auto* t = fitting[rng.below(fitting.size())];
    const std::string in = t->fill(corrupt), out = t->fill(word);
    if (p.eval(in) != out) return std::nullopt;
    const bool dep = p.candidates(corrupt).size() >= 2;
    return make(Task::contextual_spelling, in, out, {{"dependent", dep ? "1" : "0"}, {"word", word}});
}

/// (word, corruption) pairs with two or more corrections of which exactly one
/// carries the word's own tag.
inline std::vector<std::pair<std::string, std::string>> dependent_pairs(const CausalProgram& p) {
    std::vector<std::pair<std::string, std::string>> out;
    const Lexicon& lex = p.lexicon();
    for (const auto& w : lex.words) {
        bool has_template = false;
        for (const auto& t : lex.templates) has_template = has_template || t.tag == lex.tag(w);
        if (!has_template) continue;
        for (ErrorRule r : {ErrorRule::swap, ErrorRule::keyboard, ErrorRule::deletion, ErrorRule::repetition}) {
            for (const auto& c : corruptions(w, r, p.keyboard())) {
                const auto& cand = p.candidates(c);
                if (cand.size() < 2) continue;
                int same = 0;
                for (const auto& x : cand) same += lex.tag(x) == lex.tag(w);
                if (same == 1) out.emplace_back(w, c);
            }
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline std::set<int> token_set(const tok::SubwordVocab& v, const std::string& s) {
    const auto enc = tok::encode(s, tok::Mode::subword, v);
    return {enc.token_ids.begin(), enc.token_ids.end() - 1};
}

inline void tag(std::vector<Example>& xs, const std::string& split) {
    for (auto& e : xs) e.split = split;
}

}  // namespace detail

/// Build train/dev and the evaluation splits relative to the trained vocab:
/// IV items use only tokens seen in train sources, OOV items at least one unseen.
/// A held-out token set keeps OOV nonempty by design.
inline TaskData make_splits(const CausalProgram& p, std::vector<Example> pool, const GenConfig& cfg, Rng& rng) {
    const Task task = p.task();
    auto [n_train, n_dev] = default_sizes(task);
    if (cfg.n_train > 0) n_train = cfg.n_train;
    if (cfg.n_dev > 0) n_dev = cfg.n_dev;

    TaskData d;
    std::vector<std::string> corpus;
    for (const auto& e : pool) {
        corpus.push_back(e.input);
        corpus.push_back(e.output);
    }
    d.vocab = tok::train_bpe(corpus, {cfg.vocab_size, cfg.max_token_len}, cfg.seed);

    auto take = [&](std::vector<Example>& from, std::size_t n, const std::string& split) {
        if (from.size() > n) from.resize(n);
        detail::tag(from, split);
        return from;
    };

    if (task == Task::contextual_spelling || task == Task::word_search) {
        std::vector<Example> base, extra;
        for (auto& e : pool) {
            const bool eval_only = task == Task::word_search ? (e.get("split") != "train") : false;
            (eval_only ? extra : base).push_back(std::move(e));
        }
        if (static_cast<int>(base.size()) < n_train + n_dev)
            throw ConfigError("lexicon too small for " + std::to_string(n_train + n_dev) + " " + task_name(task) + " examples");
        d.train.assign(base.begin(), base.begin() + n_train);
        d.dev.assign(base.begin() + n_train, base.begin() + n_train + n_dev);
        detail::tag(d.train, "train");
        detail::tag(d.dev, "dev");
        std::map<std::string, std::vector<Example>> buckets;
        if (task == Task::contextual_spelling) {
            for (auto it = base.begin() + n_train + n_dev; it != base.end(); ++it)
                buckets[it->get("dependent") == "1" ? "Dependent" : "Independent"].push_back(*it);
        } else {
            for (auto& e : extra) buckets[e.get("split")].push_back(e);
        }
        const std::vector<std::string> names = task == Task::contextual_spelling
                                                   ? std::vector<std::string>{"Independent", "Dependent"}
                                                   : std::vector<std::string>{"P", "O", "P+O"};
        for (const auto& name : names) {
            auto& b = buckets[name];
            if (b.empty()) throw ConfigError("split " + name + " is empty after filtering");
            d.splits[name] = take(b, static_cast<std::size_t>(cfg.n_eval), name);
        }
        for (auto& e : d.train) std::erase_if(e.meta, [](const auto& kv) { return kv.first == "split"; });
        for (auto& e : d.dev) std::erase_if(e.meta, [](const auto& kv) { return kv.first == "split"; });
        for (auto& [n, xs] : d.splits)
            for (auto& e : xs) std::erase_if(e.meta, [](const auto& kv) { return kv.first == "split"; });
        return d;
    }

    // held-out multi-character tokens
    // only tokens present in at most 2% of sources, so the holdout never
    // captures shared scaffolding such as "convert "
    std::map<int, std::size_t> df;
    for (const auto& e : pool) {
        for (int id : detail::token_set(d.vocab, e.input))
            if (d.vocab.token(id).size() > 1) ++df[id];
    }
    std::vector<int> candidates;
    for (const auto& [id, c] : df)
        if (static_cast<double>(c) <= 0.02 * static_cast<double>(pool.size())) candidates.push_back(id);
    rng.shuffle(candidates);
    const auto n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.holdout_fraction * candidates.size()));
    const std::set<int> held(candidates.begin(), candidates.begin() + std::min(n_hold, candidates.size()));

    std::vector<Example> eligible, oov;
    for (auto& e : pool) {
        const auto ts = detail::token_set(d.vocab, e.input);
        const bool touches = std::any_of(ts.begin(), ts.end(), [&](int t) { return held.count(t) != 0; });
        (touches ? oov : eligible).push_back(std::move(e));
    }
    if (static_cast<int>(eligible.size()) < n_train + n_dev)
        throw ConfigError("only " + std::to_string(eligible.size()) + " " + task_name(task) + " examples avoid the held-out tokens; " +
                          std::to_string(n_train + n_dev) + " requested");
    d.train.assign(eligible.begin(), eligible.begin() + n_train);
    d.dev.assign(eligible.begin() + n_train, eligible.begin() + n_train + n_dev);
    detail::tag(d.train, "train");
    detail::tag(d.dev, "dev");

    std::set<int> seen;
    for (const auto& e : d.train) {
        const auto ts = detail::token_set(d.vocab, e.input);
        seen.insert(ts.begin(), ts.end());
    }
    std::vector<Example> iv;
    for (auto it = eligible.begin() + n_train + n_dev; it != eligible.end(); ++it) {
        const auto ts = detail::token_set(d.vocab, it->input);
        if (std::all_of(ts.begin(), ts.end(), [&](int t) { return seen.count(t) != 0; })) iv.push_back(*it);
    }

    if (task == Task::reversal) {
        // OOV strings composed only of held-out tokens
        oov.clear();
        std::vector<int> hv(held.begin(), held.end());
        std::unordered_set<std::string> used;
        for (const auto& e : d.train) used.insert(e.input);
        for (int tries = 0; tries < 200000 && static_cast<int>(oov.size()) < cfg.n_eval; ++tries) {
            std::string s;
            const int k = rng.range(1, 3);
            for (int i = 0; i < k; ++i) s += d.vocab.token(hv[rng.below(hv.size())]);
            if (static_cast<int>(s.size()) < cfg.reversal_min_len || static_cast<int>(s.size()) > cfg.reversal_max_len) continue;
            bool ok = true;
            for (char c : s) ok = ok && p.options().reversal_alphabet.find(c) != std::string::npos;
            if (!ok || used.count(s)) continue;
            const auto ts = detail::token_set(d.vocab, s);
            if (!std::all_of(ts.begin(), ts.end(), [&](int t) { return held.count(t) != 0 && seen.count(t) == 0; })) continue;
            used.insert(s);
            oov.push_back(detail::make(Task::reversal, s, reversed(s)));
        }
    }
    std::erase_if(oov, [&](const Example& e) {
        const auto ts = detail::token_set(d.vocab, e.input);
        return std::all_of(ts.begin(), ts.end(), [&](int t) { return seen.count(t) != 0; });
    });
    if (iv.empty()) throw ConfigError("split IV is empty after filtering");
    if (oov.empty()) throw ConfigError("split OOV is empty after filtering");
    d.splits["IV"] = take(iv, static_cast<std::size_t>(cfg.n_eval), "IV");
    d.splits["OOV"] = take(oov, static_cast<std::size_t>(cfg.n_eval), "OOV");
    return d;
}

/// Sample a deduplicated pool for `task` and build every split from it.
inline TaskData gen_dataset(const CausalProgram& p, const GenConfig& cfg) {
    const Task task = p.task();
    auto [n_train, n_dev] = default_sizes(task);
    if (cfg.n_train > 0) n_train = cfg.n_train;
    if (cfg.n_dev > 0) n_dev = cfg.n_dev;
    if (cfg.reversal_min_len < 1 || cfg.reversal_max_len < cfg.reversal_min_len)
        throw ConfigError("reversal length range is empty");

    Rng rng(cfg.seed);
    Rng pool_rng = rng.fork(1);
    Rng split_rng = rng.fork(2);
    const Lexicon& lex = p.lexicon();

    std::vector<Example> pool;
    std::unordered_set<std::string> seen_inputs;
    auto push = [&](Example e) {
        if (seen_inputs.insert(e.input).second) pool.push_back(std::move(e));
    };
    // extra headroom for held-out tokens and evaluation splits
    const std::size_t want = static_cast<std::size_t>((n_train + n_dev) * 2.0) + 3 * static_cast<std::size_t>(cfg.n_eval);
    const std::size_t max_tries = want * 50;

    switch (task) {
        case Task::reversal:
            for (std::size_t t = 0; pool.size() < want && t < max_tries; ++t) {
                const int n = pool_rng.range(cfg.reversal_min_len, cfg.reversal_max_len);
                const std::string s = detail::random_letters(pool_rng, p.options().reversal_alphabet, n);
                push(detail::make(task, s, reversed(s)));
            }
            break;
        case Task::unit_conversion:
            for (std::size_t t = 0; pool.size() < want && t < max_tries; ++t) push(detail::sample_unit(pool_rng));
            break;
        case Task::unscramble: {
            std::vector<std::string> words;
            for (const auto& w : lex.words) {
                if (w.size() >= 4 && p.anagram_class(w).size() == 1 && sorted_letters(w) != std::string(w.size(), w[0]))
                    words.push_back(w);
            }
            pool_rng.shuffle(words);
            for (const auto& w : words) {
                std::set<std::string> perms;
                for (int tries = 0; perms.size() < 3 && tries < 100; ++tries) {
                    std::string s = w;
                    pool_rng.shuffle(s);
                    if (s != w) perms.insert(s);
                }
                std::vector<std::string> ordered(perms.begin(), perms.end());
                pool_rng.shuffle(ordered);
                for (const auto& s : ordered) push(detail::make(task, s, w));
            }
            break;
        }
        case Task::spelling: {
            std::vector<std::string> words;
            for (const auto& w : lex.words)
                if (w.size() >= 3) words.push_back(w);
            for (std::size_t t = 0; pool.size() < want && t < max_tries; ++t) {
                if (auto e = detail::sample_spelling(pool_rng, p, words)) push(std::move(*e));
            }
            break;
        }
        case Task::contextual_spelling: {
            std::map<std::string, std::vector<std::string>> by_tag;
            for (const auto& w : lex.words)
                if (w.size() >= 3) by_tag[lex.tag(w)].push_back(w);
            const auto dep = detail::dependent_pairs(p);
            if (dep.empty()) throw ConfigError("lexicon yields no Dependent spelling pairs");
            for (std::size_t t = 0; pool.size() < want && t < max_tries; ++t) {
                const bool want_dep = pool_rng.uniform() < 0.2;
                if (auto e = detail::sample_contextual(pool_rng, p, by_tag, dep, want_dep)) push(std::move(*e));
            }
            break;
        }
        case Task::word_search: {
            const auto distractors = detail::distractor_words(lex);
            const std::size_t want_base = static_cast<std::size_t>(n_train + n_dev);
            std::size_t n_base = 0;
            const std::vector<std::tuple<std::string, bool, bool>> kinds{
                {"train", false, false}, {"P", true, false}, {"O", false, true}, {"P+O", true, true}};
            for (const auto& [name, para, over] : kinds) {
                const std::size_t goal = name == "train" ? want_base : static_cast<std::size_t>(cfg.n_eval);
                std::size_t got = 0;
                for (std::size_t t = 0; got < goal && t < goal * 200; ++t) {
                    auto e = detail::sample_word_search(pool_rng, p, distractors, para, over);
                    if (!e) continue;
                    e->meta.emplace_back("split", name);
                    const std::size_t before = pool.size();
                    push(std::move(*e));
                    got += pool.size() - before;
                }
                if (name == "train") n_base = got;
            }
            if (n_base < want_base) throw ConfigError("could not generate enough Word Search puzzles");
            break;
        }
    }
    if (task != Task::word_search) split_rng.shuffle(pool);
    return make_splits(p, std::move(pool), cfg, split_rng);
}

}  // namespace ciit::tasks

#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ciit/errors.hpp"

#ifndef CIIT_DATA_DIR
#define CIIT_DATA_DIR "data"
#endif

namespace ciit::tasks {

inline std::string data_path(const std::string& name) { return std::string(CIIT_DATA_DIR) + "/" + name; }

struct Synset {
    std::string name;
    std::vector<std::string> definitions;  // [0] primary, rest paraphrases
    std::vector<std::string> hyponyms;
};

/// Context template for contextual spelling correction: "<left> {} <right>".
struct ContextTemplate {
    std::string tag;
    std::string left;
    std::string right;

    std::string fill(const std::string& word) const { return left + " " + word + " " + right; }
};

struct Lexicon {
    std::vector<std::string> words;
    std::unordered_map<std::string, std::string> tags;  // word -> pos tag
    std::vector<Synset> synsets;
    std::vector<ContextTemplate> templates;

    bool contains(const std::string& w) const { return tags.count(w) != 0; }

    const std::string& tag(const std::string& w) const {
        auto it = tags.find(w);
        if (it == tags.end()) throw IndexError("word '" + w + "' not in lexicon");
        return it->second;
    }

    /// Index of the synset whose name or any definition equals `text`, or -1.
    int synset_for(const std::string& text) const {
        for (std::size_t i = 0; i < synsets.size(); ++i) {
            const auto& s = synsets[i];
            if (s.name == text) return static_cast<int>(i);
            if (std::find(s.definitions.begin(), s.definitions.end(), text) != s.definitions.end())
                return static_cast<int>(i);
        }
        return -1;
    }

    bool is_hyponym(const std::string& w) const {
        for (const auto& s : synsets)
            if (std::find(s.hyponyms.begin(), s.hyponyms.end(), w) != s.hyponyms.end()) return true;
        return false;
    }

    /// Structural checks from the data contract.
    void validate() const {
        for (const auto& s : synsets) {
            if (s.hyponyms.size() < 5) throw ConfigError("synset '" + s.name + "' has fewer than 5 hyponyms");
            if (s.definitions.size() < 2) throw ConfigError("synset '" + s.name + "' has fewer than 2 definitions");
            for (const auto& h : s.hyponyms)
                if (!contains(h)) throw ConfigError("hyponym '" + h + "' of '" + s.name + "' missing from WORDS");
        }
    }

    static Lexicon parse(std::istream& in) {
        Lexicon lex;
        std::string line, section;
        auto split = [](const std::string& s, char sep) {
            std::vector<std::string> out;
            std::string cur;
            std::istringstream is(s);
            while (std::getline(is, cur, sep)) out.push_back(cur);
            return out;
        };
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (line == "WORDS" || line == "SYNSETS" || line == "TEMPLATES") {
                section = line;
                continue;
            }
            const auto f = split(line, '\t');
            if (section == "WORDS") {
                if (f.size() != 2) throw ConfigError("bad lexicon word line '" + line + "'");
                if (lex.tags.emplace(f[0], f[1]).second) lex.words.push_back(f[0]);
            } else if (section == "SYNSETS") {
                if (f.size() != 3) throw ConfigError("bad lexicon synset line '" + line + "'");
                lex.synsets.push_back({f[0], split(f[1], '|'), split(f[2], ',')});
            } else if (section == "TEMPLATES") {
                if (f.size() != 3) throw ConfigError("bad lexicon template line '" + line + "'");
                lex.templates.push_back({f[0], f[1], f[2]});
            } else {
                throw ConfigError("lexicon must start with a WORDS section");
            }
        }
        lex.validate();
        return lex;
    }

    static Lexicon load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw PathError("cannot read lexicon " + path);
        return parse(f);
    }

    static const Lexicon& bundled() {
        static const Lexicon lex = load(data_path("lexicon.txt"));
        return lex;
    }
};

/// QWERTY neighbour table: letter -> adjacent letters.
struct Keyboard {
    std::map<char, std::string> neighbors;

    static Keyboard load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw PathError("cannot read keyboard table " + path);
        Keyboard kb;
        std::string line;
        while (std::getline(f, line)) {
            if (line.size() < 3 || line[1] != '\t') continue;
            std::string nb;
            for (char c : line.substr(2))
                if (c != ' ') nb.push_back(c);
            kb.neighbors[line[0]] = nb;
        }
        return kb;
    }

    static const Keyboard& bundled() {
        static const Keyboard kb = load(data_path("keyboard.txt"));
        return kb;
    }
};

}  // namespace ciit::tasks

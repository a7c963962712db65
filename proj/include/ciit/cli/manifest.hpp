#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "ciit/errors.hpp"

namespace ciit::cli {

using Manifest = std::map<std::string, std::string>;

/// key=value lines; blank lines and lines starting with '#' are skipped.
inline Manifest parse_manifest(std::istream& in, const std::string& origin = "manifest") {
    Manifest m;
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError(origin + ":" + std::to_string(no) + ": expected key=value");
        if (!m.emplace(line.substr(0, eq), line.substr(eq + 1)).second)
            throw ConfigError(origin + ":" + std::to_string(no) + ": duplicate key '" + line.substr(0, eq) + "'");
    }
    return m;
}

inline Manifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw PathError("cannot read manifest " + path);
    return parse_manifest(f, path);
}

inline std::string format_manifest(const Manifest& m) {
    std::string out;
    for (const auto& [k, v] : m) {
        if (v.find('\n') != std::string::npos) throw ConfigError("manifest value for '" + k + "' spans lines");
        out += k + "=" + v + "\n";
    }
    return out;
}

/// FNV-1a 64 of a byte string, as 16 hex digits.
inline std::string digest(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string file_digest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw PathError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return digest(ss.str());
}

inline void write_manifest(const std::string& path, const Manifest& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw PathError("cannot write " + path);
    f << format_manifest(m);
}

}  // namespace ciit::cli

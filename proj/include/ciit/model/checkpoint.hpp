#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ciit/autodiff/adam.hpp"
#include "ciit/errors.hpp"
#include "ciit/model/transformer.hpp"

namespace ciit::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Binary layout: "CIIT", u16 version, header (sorted key/value strings, the
/// model config under "model."), named tensors, optional Adam state, RNG state.
struct Checkpoint {
    ModelConfig config;
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::optional<ad::AdamState> optimizer;
    std::string rng_state;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
inline void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}
inline void put_floats(std::string& out, std::span<const float> v) {
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
}

class Reader {
public:
    explicit Reader(const std::string& s) : s_(s) {}
    void need(std::size_t n) const {
        if (pos_ + n > s_.size()) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, s_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v;
        std::memcpy(&v, s_.data() + pos_, 8);
        pos_ += 8;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(s_[pos_++]);
    }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string out = s_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string out = s_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    void floats(std::vector<float>& v) {
        need(v.size() * sizeof(float));
        std::memcpy(v.data(), s_.data() + pos_, v.size() * sizeof(float));
        pos_ += v.size() * sizeof(float);
    }
    bool done() const { return pos_ == s_.size(); }

private:
    const std::string& s_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
    std::string out = "CIIT";
    const std::uint16_t ver = kCheckpointVersion;
    out.append(reinterpret_cast<const char*>(&ver), 2);
    std::map<std::string, std::string> header = c.meta;
    for (const auto& [k, v] : c.config.to_map()) header["model." + k] = v;
    detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
    for (const auto& [k, v] : header) {
        detail::put_str(out, k);
        detail::put_str(out, v);
    }
    detail::put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        detail::put_str(out, name);
        detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
        detail::put_floats(out, t.data());
    }
    out.push_back(c.optimizer ? 1 : 0);
    if (c.optimizer) {
        const auto step = static_cast<std::uint64_t>(c.optimizer->step);
        out.append(reinterpret_cast<const char*>(&step), 8);
        for (std::size_t i = 0; i < c.optimizer->m.size(); ++i) {
            detail::put_floats(out, c.optimizer->m[i]);
            detail::put_floats(out, c.optimizer->v[i]);
        }
    }
    detail::put_str(out, c.rng_state);
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
    detail::Reader r(bytes);
    if (r.raw(4) != "CIIT") throw DataError("not a checkpoint (bad magic)");
    const std::string vb = r.raw(2);
    std::uint16_t ver;
    std::memcpy(&ver, vb.data(), 2);
    if (ver != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(ver));
    Checkpoint c;
    std::map<std::string, std::string> model_keys;
    const auto n_header = r.u32();
    for (std::uint32_t i = 0; i < n_header; ++i) {
        std::string k = r.str();
        std::string v = r.str();
        if (k.rfind("model.", 0) == 0) {
            model_keys[k.substr(6)] = v;
        } else {
            c.meta[k] = v;
        }
    }
    c.config = ModelConfig::from_map(model_keys);
    const auto n_tensors = r.u32();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str();
        const auto rank = r.u32();
        ad::Shape shape;
        for (std::uint32_t j = 0; j < rank; ++j) shape.push_back(static_cast<int>(r.u32()));
        std::vector<float> data(ad::shape_numel(shape));
        r.floats(data);
        c.tensors.emplace_back(std::move(name), Tensor(shape, std::move(data)));
    }
    if (r.u8()) {
        ad::AdamState s;
        s.step = static_cast<long>(r.u64());
        for (const auto& [n, t] : c.tensors) {
            s.m.emplace_back(t.numel());
            s.v.emplace_back(t.numel());
            r.floats(s.m.back());
            r.floats(s.v.back());
        }
        c.optimizer = std::move(s);
    }
    c.rng_state = r.str();
    if (!r.done()) throw DataError("trailing bytes after checkpoint");
    return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw PathError("cannot write " + path);
    const std::string bytes = serialize_checkpoint(c);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw PathError("cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return deserialize_checkpoint(ss.str());
}

/// Snapshot of a model's parameters (copied, so later training does not alter it).
inline Checkpoint snapshot(const Transformer& m, std::map<std::string, std::string> meta = {},
                           const ad::AdamState* opt = nullptr, std::string rng_state = "") {
    Checkpoint c;
    c.config = m.config();
    c.meta = std::move(meta);
    for (const auto& [n, t] : m.named_params()) c.tensors.emplace_back(n, Tensor(t.shape(), std::vector<float>(t.data().begin(), t.data().end())));
    if (opt) c.optimizer = *opt;
    c.rng_state = std::move(rng_state);
    return c;
}

/// Rebuild the model a checkpoint describes.
inline Transformer restore(const Checkpoint& c) {
    Transformer m(c.config);
    auto& params = m.named_params();
    if (params.size() != c.tensors.size())
        throw DataError("checkpoint holds " + std::to_string(c.tensors.size()) + " tensors, model expects " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = c.tensors[i];
        if (name != params[i].first || t.shape() != params[i].second.shape())
            throw DataError("checkpoint tensor '" + name + "' " + ad::shape_str(t.shape()) + " does not match '" + params[i].first + "' " +
                            ad::shape_str(params[i].second.shape()));
        std::copy(t.data().begin(), t.data().end(), params[i].second.data().begin());
    }
    return m;
}

}  // namespace ciit::model

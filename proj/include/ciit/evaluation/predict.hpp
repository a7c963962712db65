#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "ciit/model/transformer.hpp"
#include "ciit/training/batch.hpp"

namespace ciit::eval {

using train::Codec;

/// One encoder input ready for decoding: token ids plus optional slot
/// overwrites at the intervention layer (rows local to this sequence).
struct PreparedInput {
    std::vector<int> ids;
    std::vector<ad::SliceRef> refs;
    std::vector<float> values;  // refs.size() x slot_dim
};

inline PreparedInput prepare(const Codec& codec, const std::string& x) { return {codec.source(x).token_ids, {}, {}}; }

/// Greedy decoding of prepared inputs, `batch` sequences at a time.
inline std::vector<std::string> predict_prepared(const model::Transformer& m, const Codec& codec, std::span<const PreparedInput> xs,
                                                 int batch = 64) {
    std::vector<std::string> out;
    out.reserve(xs.size());
    const int sd = m.config().slot_dim;
    for (std::size_t lo = 0; lo < xs.size(); lo += static_cast<std::size_t>(batch)) {
        const std::size_t hi = std::min(xs.size(), lo + static_cast<std::size_t>(batch));
        model::PackedIds src;
        model::Patch patch;
        std::vector<float> vals;
        for (std::size_t i = lo; i < hi; ++i) {
            const int off = static_cast<int>(src.ids.size());
            src.add(xs[i].ids);
            for (const auto& r : xs[i].refs) patch.refs.push_back({off + r.row, r.lo});
            vals.insert(vals.end(), xs[i].values.begin(), xs[i].values.end());
        }
        ad::Tape tape(false);
        model::EncoderStates st;
        if (patch.refs.empty()) {
            st = m.encode(tape, src);
        } else {
            patch.values = ad::Tensor({static_cast<int>(patch.refs.size()), sd}, std::move(vals));
            st = m.encode(tape, src, &patch);
        }
        for (const auto& ids : m.greedy_decode(st.memory, src.segs, m.config().max_tgt_len)) out.push_back(codec.decode(ids));
    }
    return out;
}

inline std::vector<std::string> predict(const model::Transformer& m, const Codec& codec, std::span<const std::string> inputs, int batch = 64) {
    std::vector<PreparedInput> xs;
    xs.reserve(inputs.size());
    for (const auto& x : inputs) xs.push_back(prepare(codec, x));
    return predict_prepared(m, codec, xs, batch);
}

}  // namespace ciit::eval

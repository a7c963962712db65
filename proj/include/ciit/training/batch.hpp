#pragma once

#include <span>
#include <string>
#include <vector>

#include "ciit/errors.hpp"
#include "ciit/iit/triplets.hpp"
#include "ciit/model/alignment.hpp"
#include "ciit/model/transformer.hpp"
#include "ciit/tasks/dataset.hpp"
#include "ciit/tokenization/bpe.hpp"

namespace ciit::train {

using model::PackedIds;
using model::Transformer;
using tok::SubwordVocab;

/// Source/target tokenization under one regime, with length checks.
struct Codec {
    const SubwordVocab* vocab = nullptr;
    tok::Regime regime;
    int max_src_len = 64;
    int max_tgt_len = 64;

    Codec(const SubwordVocab& v, tok::Regime r, const model::ModelConfig& cfg)
        : vocab(&v), regime(r), max_src_len(cfg.max_src_len), max_tgt_len(cfg.max_tgt_len) {}

    tok::Encoding source(const std::string& x) const {
        auto e = tok::encode(x, regime.source, *vocab);
        if (static_cast<int>(e.size()) > max_src_len)
            throw DataError("input '" + x + "' needs " + std::to_string(e.size()) + " source steps, limit " + std::to_string(max_src_len));
        return e;
    }
    /// Target ids ending in EOS.
    std::vector<int> target(const std::string& y) const {
        auto ids = tok::encode(y, regime.target, *vocab).token_ids;
        if (static_cast<int>(ids.size()) > max_tgt_len)
            throw DataError("output '" + y + "' needs " + std::to_string(ids.size()) + " target steps, limit " + std::to_string(max_tgt_len));
        return ids;
    }
    std::string decode(std::span<const int> ids) const { return tok::decode(ids, *vocab); }
};

/// Teacher-forcing pair: decoder input BOS + y[:-1], labels y.
struct TargetBatch {
    PackedIds input;
    std::vector<int> labels;

    void add(const std::vector<int>& y) {
        std::vector<int> in = {SubwordVocab::kBos};
        in.insert(in.end(), y.begin(), y.end() - 1);
        input.add(in);
        labels.insert(labels.end(), y.begin(), y.end());
    }
};

/// Mean token cross-entropy of (x, y) pairs.
inline ad::Tensor standard_loss(ad::Tape& tape, const Transformer& m, const Codec& codec, std::span<const tasks::Example* const> batch) {
    PackedIds src;
    TargetBatch tgt;
    for (const auto* e : batch) {
        src.add(codec.source(e->input).token_ids);
        tgt.add(codec.target(e->output));
    }
    auto st = m.encode(tape, src);
    auto logits = m.decoder_logits(tape, st.memory, src.segs, tgt.input);
    return ad::cross_entropy(tape, logits, tgt.labels);
}

struct IITBatchResult {
    ad::Tensor loss;  // undefined when every triplet was skipped
    int used = 0;
    int skipped = 0;
};

/// Appendix A.2 counterfactual loss: source prefix states feed the base's
/// intervention-layer slots, the rest of the model runs on the patched base,
/// and the decoder is scored against y_inv. Triplets whose slots cannot be
/// aligned are skipped and counted.
inline IITBatchResult iit_loss(ad::Tape& tape, const Transformer& m, const Codec& codec, std::span<const iit::Triplet* const> batch) {
    IITBatchResult r;
    PackedIds base, source;
    TargetBatch tgt;
    std::vector<ad::SliceRef> from, to;
    for (const auto* t : batch) {
        try {
            auto be = codec.source(t->base);
            auto se = codec.source(t->source);
            auto ba = model::build_char_slots(be, m.config());
            auto sa = model::build_char_slots(se, m.config());
            auto y = codec.target(t->label);
            const int bo = static_cast<int>(base.ids.size()), so = static_cast<int>(source.ids.size());
            std::vector<ad::SliceRef> f, g;
            for (const auto& p : t->pairs) {
                f.push_back(sa.ref(p.source_pos, so));
                g.push_back(ba.ref(p.base_pos, bo));
            }
            from.insert(from.end(), f.begin(), f.end());
            to.insert(to.end(), g.begin(), g.end());
            base.add(be.token_ids);
            source.add(se.token_ids);
            tgt.add(y);
            ++r.used;
        } catch (const AlignmentError&) {
            ++r.skipped;
        } catch (const EncodingError&) {
            ++r.skipped;
        }
    }
    if (r.used == 0) return r;
    auto hs = m.encode_prefix(tape, source);
    model::Patch patch;
    patch.refs = std::move(to);
    patch.values = ad::gather_slices(tape, hs, from, m.config().slot_dim);
    auto hb = m.encode_prefix(tape, base);
    hb = m.apply_patch(tape, hb, patch);
    auto memory = m.encode_suffix(tape, hb, base.segs);
    auto logits = m.decoder_logits(tape, memory, base.segs, tgt.input);
    r.loss = ad::cross_entropy(tape, logits, tgt.labels);
    return r;
}

}  // namespace ciit::train

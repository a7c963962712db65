#pragma once

#include <string>
#include <vector>

#include "ciit/autodiff/ops.hpp"
#include "ciit/errors.hpp"
#include "ciit/model/config.hpp"
#include "ciit/tokenization/bpe.hpp"

namespace ciit::model {

struct CharSlot {
    int token_step = 0;
    int char_index_in_token = 0;
    char character = 0;
    int lo = 0;
    int hi = 0;
};

/// Slots in raw-string order: slots[i] holds character i of the input.
struct CharAlignment {
    std::vector<CharSlot> slots;

    std::size_t size() const { return slots.size(); }
    const CharSlot& at_char(int pos) const {
        if (pos < 0 || pos >= static_cast<int>(slots.size()))
            throw AlignmentError("character position " + std::to_string(pos) + " has no slot (" +
                                 std::to_string(slots.size()) + " slots)");
        return slots[static_cast<std::size_t>(pos)];
    }
    /// Reference into the packed intervention-layer state whose sequence starts at `offset`.
    ad::SliceRef ref(int pos, int offset = 0) const {
        const auto& s = at_char(pos);
        return {offset + s.token_step, s.lo};
    }
};

/// Each character of a token gets slot_dim consecutive dims, from 0, at the
/// token's own step. Special tokens get none.
inline CharAlignment build_char_slots(const tok::Encoding& enc, const ModelConfig& cfg) {
    CharAlignment a;
    for (std::size_t t = 0; t < enc.size(); ++t) {
        const std::string& chars = enc.token_chars[t];
        if (static_cast<int>(chars.size()) > cfg.max_chars_per_token)
            throw AlignmentError("token '" + chars + "' has " + std::to_string(chars.size()) + " characters; at most " +
                                 std::to_string(cfg.max_chars_per_token) + " fit");
        for (std::size_t j = 0; j < chars.size(); ++j) {
            const int lo = static_cast<int>(j) * cfg.slot_dim;
            a.slots.push_back({static_cast<int>(t), static_cast<int>(j), chars[j], lo, lo + cfg.slot_dim});
        }
    }
    return a;
}

}  // namespace ciit::model

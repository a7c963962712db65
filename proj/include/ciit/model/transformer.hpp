#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ciit/autodiff/ops.hpp"
#include "ciit/errors.hpp"
#include "ciit/model/config.hpp"
#include "ciit/rng.hpp"
#include "ciit/tokenization/bpe.hpp"

namespace ciit::model {

using ad::Segment;
using ad::Tape;
using ad::Tensor;

/// Packed token sequences: segment i covers ids[offset, offset+length).
struct PackedIds {
    std::vector<int> ids;
    std::vector<Segment> segs;

    void add(std::span<const int> seq) {
        segs.push_back({static_cast<int>(ids.size()), static_cast<int>(seq.size())});
        ids.insert(ids.end(), seq.begin(), seq.end());
    }
    std::size_t size() const { return segs.size(); }
};

/// Overwrite of intervention-layer slices: refs index rows of the packed state.
struct Patch {
    std::vector<ad::SliceRef> refs;
    Tensor values;  // [refs.size(), slot_dim]
};

struct EncoderStates {
    std::vector<Tensor> layers;  // [0] embeddings, [l] output of block l
    Tensor memory;               // final layer norm of the last block
};

inline Tensor sinusoid_table(const std::vector<Segment>& segs, int rows, int d, int start = 0) {
    Tensor pe({rows, d});
    auto p = pe.data();
    for (const auto& s : segs) {
        for (int t = 0; t < s.length; ++t) {
            const double pos = start + t;
            float* row = p.data() + static_cast<std::size_t>(s.offset + t) * d;
            for (int i = 0; i < d; i += 2) {
                const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
                row[i] = static_cast<float>(std::sin(pos * freq));
                if (i + 1 < d) row[i + 1] = static_cast<float>(std::cos(pos * freq));
            }
        }
    }
    return pe;
}

/// Pre-layer-norm encoder-decoder transformer over packed batches.
class Transformer {
public:
    explicit Transformer(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        const int d = cfg_.d_model, f = cfg_.ff_dim;
        auto normal = [&](ad::Shape s, float std) {
            std::vector<float> v(ad::shape_numel(s));
            for (auto& x : v) {
                const double u1 = 1.0 - rng.uniform(), u2 = rng.uniform();
                x = static_cast<float>(std * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2));
            }
            return Tensor::parameter(std::move(s), std::move(v));
        };
        auto xavier = [&](int in, int out) {
            const double a = std::sqrt(6.0 / (in + out));
            std::vector<float> v(static_cast<std::size_t>(in) * out);
            for (auto& x : v) x = static_cast<float>(rng.uniform(-a, a));
            return Tensor::parameter({in, out}, std::move(v));
        };
        auto fill = [](int n, float value) { return Tensor::parameter({n}, std::vector<float>(static_cast<std::size_t>(n), value)); };
        auto add = [&](const std::string& name, Tensor t) { params_.emplace_back(name, std::move(t)); };
        auto add_ln = [&](const std::string& p) {
            add(p + ".g", fill(d, 1.0f));
            add(p + ".b", fill(d, 0.0f));
        };
        auto add_attn = [&](const std::string& p) {
            for (const char* m : {"q", "k", "v", "o"}) {
                add(p + ".w" + m, xavier(d, d));
                add(p + ".b" + m, fill(d, 0.0f));
            }
        };
        auto add_ff = [&](const std::string& p) {
            add(p + ".w1", xavier(d, f));
            add(p + ".b1", fill(f, 0.0f));
            add(p + ".w2", xavier(f, d));
            add(p + ".b2", fill(d, 0.0f));
        };
        add("src_embed", normal({cfg_.src_vocab, d}, 1.0f));
        add("tgt_embed", normal({cfg_.tgt_vocab, d}, 1.0f));
        for (int l = 0; l < cfg_.enc_layers; ++l) {
            const std::string p = "enc." + std::to_string(l);
            add_ln(p + ".ln1");
            add_attn(p + ".self");
            add_ln(p + ".ln2");
            add_ff(p + ".ff");
        }
        add_ln("enc.ln");
        for (int l = 0; l < cfg_.dec_layers; ++l) {
            const std::string p = "dec." + std::to_string(l);
            add_ln(p + ".ln1");
            add_attn(p + ".self");
            add_ln(p + ".ln2");
            add_attn(p + ".cross");
            add_ln(p + ".ln3");
            add_ff(p + ".ff");
        }
        add_ln("dec.ln");
        add("out.w", xavier(d, cfg_.tgt_vocab));
        add("out.b", fill(cfg_.tgt_vocab, 0.0f));
        for (std::size_t i = 0; i < params_.size(); ++i) index_.emplace(params_[i].first, i);
    }

    const ModelConfig& config() const { return cfg_; }
    std::vector<std::pair<std::string, Tensor>>& named_params() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& named_params() const { return params_; }

    std::vector<Tensor> params() const {
        std::vector<Tensor> out;
        for (const auto& [n, t] : params_) out.push_back(t);
        return out;
    }

    const Tensor& param(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw IndexError("no parameter named '" + name + "'");
        return params_[it->second].second;
    }

    void zero_grad() {
        for (auto& [n, t] : params_) t.zero_grad();
    }

    /// Layer-0 state: token embedding plus sinusoidal position.
    Tensor embed_source(Tape& tape, const PackedIds& src) const {
        check_ids(src, cfg_.src_vocab, "source");
        Tensor e = ad::embedding(tape, param("src_embed"), src.ids);
        return ad::add(tape, e, sinusoid_table(src.segs, static_cast<int>(src.ids.size()), cfg_.d_model));
    }

    /// Apply encoder blocks [from, to) to a packed state.
    Tensor encoder_blocks(Tape& tape, Tensor h, const std::vector<Segment>& segs, int from, int to) const {
        for (int l = from; l < to; ++l) h = encoder_block(tape, h, segs, l);
        return h;
    }

    /// State at the intervention layer (f_pre).
    Tensor encode_prefix(Tape& tape, const PackedIds& src) const {
        return encoder_blocks(tape, embed_source(tape, src), src.segs, 0, cfg_.intervention_layer);
    }

    /// Remaining blocks and the final norm (f_post, encoder part).
    Tensor encode_suffix(Tape& tape, const Tensor& state, const std::vector<Segment>& segs) const {
        Tensor h = encoder_blocks(tape, state, segs, cfg_.intervention_layer, cfg_.enc_layers);
        return ad::layer_norm(tape, h, param("enc.ln.g"), param("enc.ln.b"));
    }

    /// Full encoder; `patch`, when given, overwrites intervention-layer slices.
    EncoderStates encode(Tape& tape, const PackedIds& src, const Patch* patch = nullptr) const {
        EncoderStates st;
        Tensor h = embed_source(tape, src);
        st.layers.push_back(h);
        for (int l = 0; l < cfg_.enc_layers; ++l) {
            if (l == cfg_.intervention_layer && patch) {
                h = apply_patch(tape, h, *patch);
                st.layers.back() = h;
            }
            h = encoder_block(tape, h, src.segs, l);
            st.layers.push_back(h);
        }
        if (cfg_.intervention_layer == cfg_.enc_layers && patch) {
            h = apply_patch(tape, h, *patch);
            st.layers.back() = h;
        }
        st.memory = ad::layer_norm(tape, h, param("enc.ln.g"), param("enc.ln.b"));
        return st;
    }

    Tensor apply_patch(Tape& tape, const Tensor& state, const Patch& patch) const {
        if (patch.refs.empty()) return state;
        if (patch.values.rank() != 2 || patch.values.dim(1) != cfg_.slot_dim)
            throw AlignmentError("patch values " + ad::shape_str(patch.values.shape()) + " are not slot-wide");
        for (const auto& r : patch.refs) {
            if (r.lo < 0 || r.lo + cfg_.slot_dim > cfg_.slot_region() || r.lo % cfg_.slot_dim != 0)
                throw AlignmentError("patch dims [" + std::to_string(r.lo) + "," + std::to_string(r.lo + cfg_.slot_dim) +
                                     ") outside the slot region [0," + std::to_string(cfg_.slot_region()) + ")");
        }
        return ad::patch_slices(tape, state, patch.refs, patch.values);
    }

    /// Teacher-forced decoder logits [sum tgt lengths, tgt_vocab].
    Tensor decoder_logits(Tape& tape, const Tensor& memory, const std::vector<Segment>& mem_segs, const PackedIds& tgt_in) const {
        check_ids(tgt_in, cfg_.tgt_vocab, "target");
        if (tgt_in.size() != mem_segs.size()) throw DimensionError("decoder batch and memory batch differ in size");
        Tensor h = ad::embedding(tape, param("tgt_embed"), tgt_in.ids);
        h = ad::add(tape, h, sinusoid_table(tgt_in.segs, static_cast<int>(tgt_in.ids.size()), cfg_.d_model));
        for (int l = 0; l < cfg_.dec_layers; ++l) {
            const std::string p = "dec." + std::to_string(l);
            Tensor a = ln(tape, h, p + ".ln1");
            h = ad::add(tape, h, attend(tape, a, a, tgt_in.segs, tgt_in.segs, p + ".self", true));
            a = ln(tape, h, p + ".ln2");
            h = ad::add(tape, h, attend(tape, a, memory, tgt_in.segs, mem_segs, p + ".cross", false));
            h = ad::add(tape, h, feed_forward(tape, ln(tape, h, p + ".ln3"), p + ".ff"));
        }
        return ad::linear(tape, ln(tape, h, "dec.ln"), param("out.w"), param("out.b"));
    }

    /// Argmax decoding with a key/value cache; ties go to the lowest id. Each
    /// result ends with EOS unless max_len was reached first.
    std::vector<std::vector<int>> greedy_decode(const Tensor& memory, const std::vector<Segment>& mem_segs, int max_len) const {
        Tape tape(false);
        const int d = cfg_.d_model;
        const std::size_t B = mem_segs.size();
        std::vector<std::vector<int>> out(B);
        std::vector<Tensor> ck, cv;  // cross keys/values per layer
        for (int l = 0; l < cfg_.dec_layers; ++l) {
            const std::string p = "dec." + std::to_string(l) + ".cross";
            ck.push_back(ad::linear(tape, memory, param(p + ".wk"), param(p + ".bk")));
            cv.push_back(ad::linear(tape, memory, param(p + ".wv"), param(p + ".bv")));
        }
        // self-attention cache [layer][sequence] -> rows of d floats
        std::vector<std::vector<std::vector<float>>> sk(static_cast<std::size_t>(cfg_.dec_layers), std::vector<std::vector<float>>(B)),
            sv = sk;
        std::vector<int> active(B);
        for (std::size_t b = 0; b < B; ++b) active[b] = static_cast<int>(b);
        std::vector<int> cur(B, tok::SubwordVocab::kBos);
        for (int step = 0; step < max_len && !active.empty(); ++step) {
            const int A = static_cast<int>(active.size());
            std::vector<int> ids(static_cast<std::size_t>(A));
            for (int i = 0; i < A; ++i) ids[i] = cur[static_cast<std::size_t>(active[i])];
            Tensor h = ad::embedding(tape, param("tgt_embed"), ids);
            std::vector<Segment> one(static_cast<std::size_t>(A));
            for (int i = 0; i < A; ++i) one[i] = {i, 1};
            h = ad::add(tape, h, sinusoid_table(one, A, d, step));
            for (int l = 0; l < cfg_.dec_layers; ++l) {
                const std::string p = "dec." + std::to_string(l);
                Tensor a = ln(tape, h, p + ".ln1");
                Tensor q = ad::linear(tape, a, param(p + ".self.wq"), param(p + ".self.bq"));
                Tensor k = ad::linear(tape, a, param(p + ".self.wk"), param(p + ".self.bk"));
                Tensor v = ad::linear(tape, a, param(p + ".self.wv"), param(p + ".self.bv"));
                std::vector<float> kp, vp;
                std::vector<Segment> ks(static_cast<std::size_t>(A));
                for (int i = 0; i < A; ++i) {
                    auto& kc = sk[static_cast<std::size_t>(l)][static_cast<std::size_t>(active[i])];
                    auto& vc = sv[static_cast<std::size_t>(l)][static_cast<std::size_t>(active[i])];
                    kc.insert(kc.end(), k.data().begin() + static_cast<std::ptrdiff_t>(i) * d, k.data().begin() + static_cast<std::ptrdiff_t>(i + 1) * d);
                    vc.insert(vc.end(), v.data().begin() + static_cast<std::ptrdiff_t>(i) * d, v.data().begin() + static_cast<std::ptrdiff_t>(i + 1) * d);
                    ks[i] = {static_cast<int>(kp.size()) / d, step + 1};
                    kp.insert(kp.end(), kc.begin(), kc.end());
                    vp.insert(vp.end(), vc.begin(), vc.end());
                }
                const int rows = static_cast<int>(kp.size()) / d;
                Tensor att = ad::attention(tape, q, Tensor({rows, d}, std::move(kp)), Tensor({rows, d}, std::move(vp)), one, ks,
                                           cfg_.n_heads, false);
                h = ad::add(tape, h, ad::linear(tape, att, param(p + ".self.wo"), param(p + ".self.bo")));
                a = ln(tape, h, p + ".ln2");
                q = ad::linear(tape, a, param(p + ".cross.wq"), param(p + ".cross.bq"));
                std::vector<Segment> ms(static_cast<std::size_t>(A));
                for (int i = 0; i < A; ++i) ms[i] = mem_segs[static_cast<std::size_t>(active[i])];
                att = ad::attention(tape, q, ck[static_cast<std::size_t>(l)], cv[static_cast<std::size_t>(l)], one, ms, cfg_.n_heads, false);
                h = ad::add(tape, h, ad::linear(tape, att, param(p + ".cross.wo"), param(p + ".cross.bo")));
                h = ad::add(tape, h, feed_forward(tape, ln(tape, h, p + ".ln3"), p + ".ff"));
            }
            Tensor logits = ad::linear(tape, ln(tape, h, "dec.ln"), param("out.w"), param("out.b"));
            std::vector<int> still;
            for (int i = 0; i < A; ++i) {
                const float* row = logits.data().data() + static_cast<std::size_t>(i) * cfg_.tgt_vocab;
                int best = 0;
                for (int j = 1; j < cfg_.tgt_vocab; ++j)
                    if (row[j] > row[best]) best = j;
                const auto b = static_cast<std::size_t>(active[i]);
                out[b].push_back(best);
                cur[b] = best;
                if (best != tok::SubwordVocab::kEos) still.push_back(active[i]);
            }
            active = std::move(still);
        }
        return out;
    }

private:
    static void check_ids(const PackedIds& p, int vocab, const char* what) {
        for (int id : p.ids)
            if (id < 0 || id >= vocab)
                throw IndexError(std::string(what) + " token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
    }

    Tensor ln(Tape& tape, const Tensor& x, const std::string& p) const {
        return ad::layer_norm(tape, x, param(p + ".g"), param(p + ".b"));
    }

    Tensor attend(Tape& tape, const Tensor& xq, const Tensor& xkv, const std::vector<Segment>& qs, const std::vector<Segment>& ks,
                  const std::string& p, bool causal) const {
        Tensor q = ad::linear(tape, xq, param(p + ".wq"), param(p + ".bq"));
        Tensor k = ad::linear(tape, xkv, param(p + ".wk"), param(p + ".bk"));
        Tensor v = ad::linear(tape, xkv, param(p + ".wv"), param(p + ".bv"));
        Tensor a = ad::attention(tape, q, k, v, qs, ks, cfg_.n_heads, causal);
        return ad::linear(tape, a, param(p + ".wo"), param(p + ".bo"));
    }

    Tensor feed_forward(Tape& tape, const Tensor& x, const std::string& p) const {
        Tensor h = ad::gelu(tape, ad::linear(tape, x, param(p + ".w1"), param(p + ".b1")));
        return ad::linear(tape, h, param(p + ".w2"), param(p + ".b2"));
    }

    Tensor encoder_block(Tape& tape, const Tensor& x, const std::vector<Segment>& segs, int l) const {
        const std::string p = "enc." + std::to_string(l);
        Tensor a = ln(tape, x, p + ".ln1");
        Tensor h = ad::add(tape, x, attend(tape, a, a, segs, segs, p + ".self", false));
        return ad::add(tape, h, feed_forward(tape, ln(tape, h, p + ".ln2"), p + ".ff"));
    }

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace ciit::model

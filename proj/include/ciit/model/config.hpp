#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <type_traits>

#include "ciit/errors.hpp"

namespace ciit::model {

struct ModelConfig {
    int d_model = 64;
    int enc_layers = 2;
    int dec_layers = 2;
    int n_heads = 4;
    int ff_dim = 128;
    int max_src_len = 64;
    int max_tgt_len = 64;
    int src_vocab = 0;
    int tgt_vocab = 0;
    int intervention_layer = 1;  // 0 is the embedding output, L the output of block L
    int slot_dim = 4;
    int max_chars_per_token = 8;
    std::uint64_t seed = 0;

    int slot_region() const { return slot_dim * max_chars_per_token; }

    void validate() const {
        auto need = [](bool ok, const std::string& what) {
            if (!ok) throw ConfigError(what);
        };
        need(d_model > 0 && enc_layers > 0 && dec_layers > 0 && ff_dim > 0, "model sizes must be positive");
        need(n_heads > 0 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
        need(src_vocab > 0 && tgt_vocab > 0, "vocabulary sizes must be positive");
        need(max_src_len > 0 && max_tgt_len > 0, "maximum lengths must be positive");
        need(slot_dim > 0 && max_chars_per_token > 0, "slot geometry must be positive");
        need(slot_region() <= d_model / 2, "slot_dim x max_chars_per_token = " + std::to_string(slot_region()) +
                                               " exceeds d_model / 2 = " + std::to_string(d_model / 2));
        need(intervention_layer >= 0 && intervention_layer <= enc_layers,
             "intervention_layer " + std::to_string(intervention_layer) + " outside [0, " + std::to_string(enc_layers) + "]");
    }

    std::map<std::string, std::string> to_map() const {
        return {{"d_model", std::to_string(d_model)},
                {"enc_layers", std::to_string(enc_layers)},
                {"dec_layers", std::to_string(dec_layers)},
                {"n_heads", std::to_string(n_heads)},
                {"ff_dim", std::to_string(ff_dim)},
                {"max_src_len", std::to_string(max_src_len)},
                {"max_tgt_len", std::to_string(max_tgt_len)},
                {"src_vocab", std::to_string(src_vocab)},
                {"tgt_vocab", std::to_string(tgt_vocab)},
                {"intervention_layer", std::to_string(intervention_layer)},
                {"slot_dim", std::to_string(slot_dim)},
                {"max_chars_per_token", std::to_string(max_chars_per_token)},
                {"seed", std::to_string(seed)}};
    }

    static ModelConfig from_map(const std::map<std::string, std::string>& m) {
        ModelConfig c;
        auto get = [&](const char* k, auto& field) {
            auto it = m.find(k);
            if (it == m.end()) return;
            try {
                if constexpr (std::is_same_v<std::decay_t<decltype(field)>, std::uint64_t>) {
                    field = std::stoull(it->second);
                } else {
                    field = std::stoi(it->second);
                }
            } catch (const std::exception&) {
                throw ConfigError("model field " + std::string(k) + " has non-numeric value '" + it->second + "'");
            }
        };
        get("d_model", c.d_model);
        get("enc_layers", c.enc_layers);
        get("dec_layers", c.dec_layers);
        get("n_heads", c.n_heads);
        get("ff_dim", c.ff_dim);
        get("max_src_len", c.max_src_len);
        get("max_tgt_len", c.max_tgt_len);
        get("src_vocab", c.src_vocab);
        get("tgt_vocab", c.tgt_vocab);
        get("intervention_layer", c.intervention_layer);
        get("slot_dim", c.slot_dim);
        get("max_chars_per_token", c.max_chars_per_token);
        get("seed", c.seed);
        return c;
    }
};

}  // namespace ciit::model

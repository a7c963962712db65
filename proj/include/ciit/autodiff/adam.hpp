#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ciit/autodiff/tensor.hpp"
#include "ciit/errors.hpp"

namespace ciit::ad {

struct AdamOptions {
    float lr = 5e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    long step = 0;

    static AdamState for_params(std::span<const Tensor> params) {
        AdamState s;
        for (const auto& p : params) {
            s.m.emplace_back(p.numel(), 0.0f);
            s.v.emplace_back(p.numel(), 0.0f);
        }
        return s;
    }
};

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Parameters without an allocated grad are treated as having zero gradient.
inline void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& opt) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("adam state holds " + std::to_string(state.m.size()) + " buffers for " +
                             std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
            throw DimensionError("adam moment buffer " + std::to_string(i) + " does not match parameter " +
                                 shape_str(params[i].shape()));
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(static_cast<double>(opt.beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(opt.beta2), static_cast<double>(state.step));
    const float step_size = static_cast<float>(opt.lr / bc1);
    const float bc2_sqrt = static_cast<float>(std::sqrt(bc2));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) {
            // zero gradient: moments decay, parameters still move by the decayed momentum
            for (std::size_t j = 0; j < state.m[i].size(); ++j) {
                state.m[i][j] *= opt.beta1;
                state.v[i][j] *= opt.beta2;
            }
        }
        auto w = params[i].data();
        const bool has = params[i].has_grad();
        std::span<const float> g = has ? std::span<const float>(params[i].grad()) : std::span<const float>{};
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            if (has) {
                m[j] = opt.beta1 * m[j] + (1.0f - opt.beta1) * g[j];
                v[j] = opt.beta2 * v[j] + (1.0f - opt.beta2) * g[j] * g[j];
            }
            w[j] -= step_size * m[j] / (std::sqrt(v[j]) / bc2_sqrt + opt.eps);
        }
    }
}

}  // namespace ciit::ad

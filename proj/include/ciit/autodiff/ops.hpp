#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ciit/autodiff/tensor.hpp"
#include "ciit/errors.hpp"

namespace ciit::ad {

namespace detail {

// C[m,n] (+)= A[m,k] * B[k,n]
inline void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0f);
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<std::size_t>(i) * n;
        const float* arow = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const float av = arow[p];
            if (av == 0.0f) continue;
            const float* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
inline void gemm_nt_acc(const float* a, const float* b, float* c, int m, int n, int k) {
    std::vector<float> bt(static_cast<std::size_t>(n) * k);
    for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) bt[static_cast<std::size_t>(j) * k + p] = b[static_cast<std::size_t>(p) * n + j];
    gemm_nn(a, bt.data(), c, m, n, k, true);
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void gemm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        const float* brow = b + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float av = arow[p];
            if (av == 0.0f) continue;
            float* crow = c + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_str(t.shape()));
}

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)

inline float gelu(float x) {
    const float u = kGeluC * (x + 0.044715f * x * x * x);
    return 0.5f * x * (1.0f + std::tanh(u));
}

inline float gelu_grad(float x) {
    const float u = kGeluC * (x + 0.044715f * x * x * x);
    const float t = std::tanh(u);
    const float du = kGeluC * (1.0f + 3.0f * 0.044715f * x * x);
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
}

}  // namespace detail

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tensor out({m, n});
    detail::gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n, false);
    if (tape.wants({&a, &b})) {
        tape.record(OpKind::matmul, {&a, &b}, out, [a, b, out, m, k, n]() mutable {
            const float* g = out.grad().data();
            if (a.requires_grad()) detail::gemm_nt_acc(g, b.data().data(), a.grad().data(), m, n, k);
            if (b.requires_grad()) detail::gemm_tn_acc(a.data().data(), g, b.grad().data(), m, k, n);
        });
    }
    return out;
}

/// x[N,in] * W[in,out] + bias[out]
inline Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias) {
    detail::require_matrix(x, "linear");
    detail::require_matrix(w, "linear");
    const int m = x.dim(0), k = x.dim(1), n = w.dim(1);
    if (w.dim(0) != k || bias.numel() != static_cast<std::size_t>(n)) {
        throw DimensionError("linear shapes disagree: " + shape_str(x.shape()) + " x " + shape_str(w.shape()) + " + " +
                             shape_str(bias.shape()));
    }
    Tensor out({m, n});
    float* o = out.data().data();
    const float* bv = bias.data().data();
    for (int i = 0; i < m; ++i) std::copy(bv, bv + n, o + static_cast<std::size_t>(i) * n);
    detail::gemm_nn(x.data().data(), w.data().data(), o, m, k, n, true);
    if (tape.wants({&x, &w, &bias})) {
        tape.record(OpKind::linear, {&x, &w, &bias}, out, [x, w, bias, out, m, k, n]() mutable {
            const float* g = out.grad().data();
            if (x.requires_grad()) detail::gemm_nt_acc(g, w.data().data(), x.grad().data(), m, n, k);
            if (w.requires_grad()) detail::gemm_tn_acc(x.data().data(), g, w.grad().data(), m, k, n);
            if (bias.requires_grad()) {
                float* gb = bias.grad().data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[j] += g[static_cast<std::size_t>(i) * n + j];
            }
        });
    }
    return out;
}

namespace detail {

enum class Binary { add, mul };

inline Tensor binary(Tape& tape, Binary kind, const Tensor& a_in, const Tensor& b_in) {
    // b broadcasts over a's leading dims; the op is commutative so order the pair.
    const bool swap = !is_suffix(b_in.shape(), a_in.shape());
    const Tensor& a = swap ? b_in : a_in;
    const Tensor& b = swap ? a_in : b_in;
    if (!is_suffix(b.shape(), a.shape())) {
        throw DimensionError("shapes " + shape_str(a_in.shape()) + " and " + shape_str(b_in.shape()) +
                             " are not trailing-broadcastable");
    }
    const std::size_t n = a.numel(), inner = b.numel();
    Tensor out(a.shape());
    auto o = out.data();
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        o[i] = kind == Binary::add ? av[i] + bv[i % inner] : av[i] * bv[i % inner];
    }
    if (tape.wants({&a, &b})) {
        tape.record(kind == Binary::add ? OpKind::add : OpKind::mul, {&a, &b}, out,
                    [a, b, out, n, inner, kind]() mutable {
                        auto g = out.grad();
                        if (a.requires_grad()) {
                            auto ga = a.grad();
                            auto bv2 = b.data();
                            for (std::size_t i = 0; i < n; ++i)
                                ga[i] += kind == Binary::add ? g[i] : g[i] * bv2[i % inner];
                        }
                        if (b.requires_grad()) {
                            auto gb = b.grad();
                            auto av2 = a.data();
                            for (std::size_t i = 0; i < n; ++i)
                                gb[i % inner] += kind == Binary::add ? g[i] : g[i] * av2[i];
                        }
                    });
    }
    return out;
}

template <class F, class G>
inline Tensor unary(Tape& tape, OpKind kind, const Tensor& a, F f, G df) {
    Tensor out(a.shape());
    auto o = out.data();
    auto av = a.data();
    for (std::size_t i = 0; i < av.size(); ++i) o[i] = f(av[i]);
    if (tape.wants({&a})) {
        tape.record(kind, {&a}, out, [a, out, df]() mutable {
            auto g = out.grad();
            auto ga = a.grad();
            auto av2 = a.data();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(av2[i]);
        });
    }
    return out;
}

}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) { return detail::binary(tape, detail::Binary::add, a, b); }
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) { return detail::binary(tape, detail::Binary::mul, a, b); }

inline Tensor add(Tape& tape, const Tensor& a, float s) {
    return detail::unary(tape, OpKind::add, a, [s](float x) { return x + s; }, [](float) { return 1.0f; });
}

inline Tensor scale(Tape& tape, const Tensor& a, float s) {
    return detail::unary(tape, OpKind::scale, a, [s](float x) { return x * s; }, [s](float) { return s; });
}

inline Tensor relu(Tape& tape, const Tensor& a) {
    return detail::unary(
        tape, OpKind::relu, a, [](float x) { return x > 0.0f ? x : 0.0f; },
        [](float x) { return x > 0.0f ? 1.0f : 0.0f; });
}

/// tanh approximation.
inline Tensor gelu(Tape& tape, const Tensor& a) {
    return detail::unary(tape, OpKind::gelu, a, detail::gelu, detail::gelu_grad);
}

/// Softmax over the last axis, max-subtracted.
inline Tensor softmax_rows(Tape& tape, const Tensor& a) {
    const int n = a.dim(-1);
    const std::size_t rows = a.numel() / static_cast<std::size_t>(n);
    Tensor out(a.shape());
    auto x = a.data();
    auto y = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x.data() + r * n;
        float* yr = y.data() + r * n;
        const float mx = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            z += yr[j];
        }
        const float inv = static_cast<float>(1.0 / z);
        for (int j = 0; j < n; ++j) yr[j] *= inv;
    }
    if (tape.wants({&a})) {
        tape.record(OpKind::softmax_rows, {&a}, out, [a, out, n, rows]() mutable {
            auto g = out.grad();
            auto ga = a.grad();
            auto y2 = out.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const float* yr = y2.data() + r * n;
                const float* gr = g.data() + r * n;
                float dot = 0.0f;
                for (int j = 0; j < n; ++j) dot += yr[j] * gr[j];
                for (int j = 0; j < n; ++j) ga[r * n + j] += yr[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

/// Mean negative log-likelihood over positions with non-zero weight.
/// `weights` empty means every position has weight 1.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> targets,
                            std::span<const float> weights = {}) {
    detail::require_matrix(logits, "cross_entropy");
    const int rows = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != rows || (!weights.empty() && static_cast<int>(weights.size()) != rows)) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                             shape_str(logits.shape()));
    }
    std::vector<float> w(static_cast<std::size_t>(rows), 1.0f);
    if (!weights.empty()) std::copy(weights.begin(), weights.end(), w.begin());
    double wsum = 0.0;
    for (int i = 0; i < rows; ++i) {
        if (w[i] != 0.0f && (targets[i] < 0 || targets[i] >= v)) {
            throw IndexError("target id " + std::to_string(targets[i]) + " outside vocabulary of " + std::to_string(v));
        }
        wsum += w[i];
    }
    std::vector<float> probs(static_cast<std::size_t>(rows) * v);
    double total = 0.0;
    auto x = logits.data();
    for (int i = 0; i < rows; ++i) {
        if (w[i] == 0.0f) continue;
        const float* xr = x.data() + static_cast<std::size_t>(i) * v;
        float* pr = probs.data() + static_cast<std::size_t>(i) * v;
        const float mx = *std::max_element(xr, xr + v);
        double z = 0.0;
        for (int j = 0; j < v; ++j) {
            pr[j] = std::exp(xr[j] - mx);
            z += pr[j];
        }
        const double lse = std::log(z) + mx;
        total += w[i] * (lse - xr[targets[i]]);
        const float inv = static_cast<float>(1.0 / z);
        for (int j = 0; j < v; ++j) pr[j] *= inv;
    }
    const double denom = wsum > 0.0 ? wsum : 1.0;
    Tensor out = Tensor::scalar(static_cast<float>(total / denom));
    if (tape.wants({&logits})) {
        std::vector<int> t(targets.begin(), targets.end());
        tape.record(OpKind::cross_entropy, {&logits}, out,
                    [logits, out, probs = std::move(probs), t = std::move(t), w = std::move(w), rows, v,
                     denom]() mutable {
                        const float g = out.grad()[0] / static_cast<float>(denom);
                        auto gl = logits.grad();
                        for (int i = 0; i < rows; ++i) {
                            if (w[i] == 0.0f) continue;
                            const float s = g * w[i];
                            float* gr = gl.data() + static_cast<std::size_t>(i) * v;
                            const float* pr = probs.data() + static_cast<std::size_t>(i) * v;
                            for (int j = 0; j < v; ++j) gr[j] += s * pr[j];
                            gr[t[i]] -= s;
                        }
                    });
    }
    return out;
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape);

/// One slice of one row: dims [lo, lo+width) at `row`.
struct SliceRef {
    int row;
    int lo;
};

/// Gather equal-width row slices of `src` into a [P, width] tensor.
inline Tensor gather_slices(Tape& tape, const Tensor& src, std::span<const SliceRef> refs, int width) {
    detail::require_matrix(src, "gather_slices");
    const int rows = src.dim(0), d = src.dim(1);
    if (refs.empty() || width <= 0) throw DimensionError("gather_slices needs at least one slice of positive width");
    for (const auto& r : refs) {
        if (r.row < 0 || r.row >= rows || r.lo < 0 || r.lo + width > d) {
            throw DimensionError("slice row " + std::to_string(r.row) + " dims [" + std::to_string(r.lo) + "," +
                                 std::to_string(r.lo + width) + ") outside " + shape_str(src.shape()));
        }
    }
    const int p = static_cast<int>(refs.size());
    Tensor out({p, width});
    auto s = src.data();
    auto o = out.data();
    for (int i = 0; i < p; ++i) {
        const float* from = s.data() + static_cast<std::size_t>(refs[i].row) * d + refs[i].lo;
        std::copy(from, from + width, o.data() + static_cast<std::size_t>(i) * width);
    }
    if (tape.wants({&src})) {
        std::vector<SliceRef> saved(refs.begin(), refs.end());
        tape.record(OpKind::gather_slices, {&src}, out, [src, out, saved = std::move(saved), width, d]() mutable {
            auto g = out.grad();
            auto gs = src.grad();
            for (std::size_t i = 0; i < saved.size(); ++i) {
                float* to = gs.data() + static_cast<std::size_t>(saved[i].row) * d + saved[i].lo;
                const float* from = g.data() + i * width;
                for (int j = 0; j < width; ++j) to[j] += from[j];
            }
        });
    }
    return out;
}

/// Copy of `dst` with each referenced slice overwritten by the matching row of
/// `values` [P, width]. Later refs win when two refs overlap. Gradient of the
/// overwritten region goes to `values`, the rest to `dst`.
inline Tensor patch_slices(Tape& tape, const Tensor& dst, std::span<const SliceRef> refs, const Tensor& values) {
    detail::require_matrix(dst, "patch_slices");
    detail::require_matrix(values, "patch_slices");
    const int rows = dst.dim(0), d = dst.dim(1), width = values.dim(1);
    if (static_cast<int>(refs.size()) != values.dim(0)) {
        throw DimensionError("patch_slices: " + std::to_string(refs.size()) + " slices for values " +
                             shape_str(values.shape()));
    }
    for (const auto& r : refs) {
        if (r.row < 0 || r.row >= rows || r.lo < 0 || r.lo + width > d) {
            throw DimensionError("patch row " + std::to_string(r.row) + " dims [" + std::to_string(r.lo) + "," +
                                 std::to_string(r.lo + width) + ") outside " + shape_str(dst.shape()));
        }
    }
    Tensor out = Tensor(dst.shape(), std::vector<float>(dst.data().begin(), dst.data().end()));
    auto o = out.data();
    auto v = values.data();
    // owner[i] = index of the ref that last wrote element i, or -1
    std::vector<int> owner(dst.numel(), -1);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const std::size_t base = static_cast<std::size_t>(refs[i].row) * d + refs[i].lo;
        for (int j = 0; j < width; ++j) {
            o[base + j] = v[i * width + j];
            owner[base + j] = static_cast<int>(i);
        }
    }
    if (tape.wants({&dst, &values})) {
        tape.record(OpKind::slice_patch, {&dst, &values}, out,
                    [dst, values, out, refs = std::vector<SliceRef>(refs.begin(), refs.end()),
                     owner = std::move(owner), width, d]() mutable {
                        auto g = out.grad();
                        if (dst.requires_grad()) {
                            auto gd = dst.grad();
                            for (std::size_t i = 0; i < g.size(); ++i)
                                if (owner[i] < 0) gd[i] += g[i];
                        }
                        if (values.requires_grad()) {
                            auto gv = values.grad();
                            for (std::size_t i = 0; i < refs.size(); ++i) {
                                const std::size_t base = static_cast<std::size_t>(refs[i].row) * d + refs[i].lo;
                                for (int j = 0; j < width; ++j) {
                                    if (owner[base + j] == static_cast<int>(i)) gv[i * width + j] += g[base + j];
                                }
                            }
                        }
                    });
    }
    return out;
}

/// Replace dims [lo, hi) at sequence position `step` of dst[T, d] by src_values.
inline Tensor slice_patch(Tape& tape, const Tensor& dst, int step, int lo, int hi, const Tensor& src_values) {
    detail::require_matrix(dst, "slice_patch");
    if (lo < 0 || hi <= lo || hi > dst.dim(1) || step < 0 || step >= dst.dim(0)) {
        throw DimensionError("slice_patch step " + std::to_string(step) + " dims [" + std::to_string(lo) + "," +
                             std::to_string(hi) + ") outside " + shape_str(dst.shape()));
    }
    if (src_values.numel() != static_cast<std::size_t>(hi - lo)) {
        throw DimensionError("slice_patch values " + shape_str(src_values.shape()) + " do not fill width " +
                             std::to_string(hi - lo));
    }
    const Tensor* values = &src_values;
    Tensor reshaped;
    if (src_values.rank() != 2 || src_values.dim(0) != 1) {
        reshaped = reshape(tape, src_values, {1, hi - lo});
        values = &reshaped;
    }
    const SliceRef ref{step, lo};
    return patch_slices(tape, dst, std::span(&ref, 1), *values);
}

/// Differentiable view change (copies).
inline Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    Tensor out = a.reshaped(std::move(shape));
    if (tape.wants({&a})) {
        tape.record(OpKind::reshape, {&a}, out, [a, out]() mutable {
            auto g = out.grad();
            auto ga = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

inline Tensor sum(Tape& tape, const Tensor& a) {
    double s = 0.0;
    for (float x : a.data()) s += x;
    Tensor out = Tensor::scalar(static_cast<float>(s));
    if (tape.wants({&a})) {
        tape.record(OpKind::sum, {&a}, out, [a, out]() mutable {
            const float g = out.grad()[0];
            for (float& x : a.grad()) x += g;
        });
    }
    return out;
}

/// Row-wise layer normalization with learned gain and bias.
inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f) {
    detail::require_matrix(x, "layer_norm");
    const int rows = x.dim(0), d = x.dim(1);
    if (gain.numel() != static_cast<std::size_t>(d) || bias.numel() != static_cast<std::size_t>(d)) {
        throw DimensionError("layer_norm parameters do not match width " + std::to_string(d));
    }
    Tensor out(x.shape());
    std::vector<float> xhat(x.numel());
    std::vector<float> rstd(static_cast<std::size_t>(rows));
    auto xv = x.data();
    auto o = out.data();
    auto gv = gain.data();
    auto bv = bias.data();
    for (int r = 0; r < rows; ++r) {
        const float* xr = xv.data() + static_cast<std::size_t>(r) * d;
        float mean = 0.0f;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<float>(d);
        float var = 0.0f;
        for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<float>(d);
        const float rs = 1.0f / std::sqrt(var + eps);
        rstd[r] = rs;
        for (int j = 0; j < d; ++j) {
            const std::size_t idx = static_cast<std::size_t>(r) * d + j;
            xhat[idx] = (xr[j] - mean) * rs;
            o[idx] = xhat[idx] * gv[j] + bv[j];
        }
    }
    if (tape.wants({&x, &gain, &bias})) {
        tape.record(OpKind::layer_norm, {&x, &gain, &bias}, out,
                    [x, gain, bias, out, xhat = std::move(xhat), rstd = std::move(rstd), rows, d]() mutable {
                        auto g = out.grad();
                        auto gv2 = gain.data();
                        if (gain.requires_grad() || bias.requires_grad()) {
                            auto gg = gain.grad();
                            auto gb = bias.grad();
                            for (int r = 0; r < rows; ++r) {
                                for (int j = 0; j < d; ++j) {
                                    const std::size_t idx = static_cast<std::size_t>(r) * d + j;
                                    gg[j] += g[idx] * xhat[idx];
                                    gb[j] += g[idx];
                                }
                            }
                        }
                        if (x.requires_grad()) {
                            auto gx = x.grad();
                            for (int r = 0; r < rows; ++r) {
                                float m1 = 0.0f, m2 = 0.0f;
                                for (int j = 0; j < d; ++j) {
                                    const std::size_t idx = static_cast<std::size_t>(r) * d + j;
                                    const float dxh = g[idx] * gv2[j];
                                    m1 += dxh;
                                    m2 += dxh * xhat[idx];
                                }
                                m1 /= static_cast<float>(d);
                                m2 /= static_cast<float>(d);
                                for (int j = 0; j < d; ++j) {
                                    const std::size_t idx = static_cast<std::size_t>(r) * d + j;
                                    const float dxh = g[idx] * gv2[j];
                                    gx[idx] += rstd[r] * (dxh - m1 - xhat[idx] * m2);
                                }
                            }
                        }
                    });
    }
    return out;
}

/// Rows of table[V, d] selected by ids.
inline Tensor embedding(Tape& tape, const Tensor& table, std::span<const int> ids) {
    detail::require_matrix(table, "embedding");
    const int v = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw DimensionError("embedding lookup of an empty id list");
    for (int id : ids) {
        if (id < 0 || id >= v) throw IndexError("token id " + std::to_string(id) + " outside table of " + std::to_string(v));
    }
    Tensor out({static_cast<int>(ids.size()), d});
    auto t = table.data();
    auto o = out.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(t.data() + static_cast<std::size_t>(ids[i]) * d, d, o.data() + i * d);
    }
    if (tape.wants({&table})) {
        tape.record(OpKind::embedding, {&table}, out,
                    [table, out, ids = std::vector<int>(ids.begin(), ids.end()), d]() mutable {
                        auto g = out.grad();
                        auto gt = table.grad();
                        for (std::size_t i = 0; i < ids.size(); ++i) {
                            float* to = gt.data() + static_cast<std::size_t>(ids[i]) * d;
                            const float* from = g.data() + i * d;
                            for (int j = 0; j < d; ++j) to[j] += from[j];
                        }
                    });
    }
    return out;
}

/// A contiguous run of rows in a packed batch.
struct Segment {
    int offset;
    int length;
};

/// Multi-head scaled dot-product attention over packed sequences. Query
/// segment i attends to key segment i only. With `causal`, query j of a
/// segment sees keys 0..j of its segment (segments must then match in length).
inline Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                        std::span<const Segment> q_segs, std::span<const Segment> k_segs, int n_heads, bool causal) {
    detail::require_matrix(q, "attention");
    detail::require_matrix(k, "attention");
    detail::require_matrix(v, "attention");
    const int d = q.dim(1);
    if (k.dim(1) != d || v.dim(1) != d || k.dim(0) != v.dim(0) || n_heads <= 0 || d % n_heads != 0 ||
        q_segs.size() != k_segs.size()) {
        throw DimensionError("attention shapes disagree: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) +
                             " v " + shape_str(v.shape()));
    }
    for (std::size_t s = 0; s < q_segs.size(); ++s) {
        if (q_segs[s].offset < 0 || q_segs[s].length <= 0 || q_segs[s].offset + q_segs[s].length > q.dim(0) ||
            k_segs[s].offset < 0 || k_segs[s].length <= 0 || k_segs[s].offset + k_segs[s].length > k.dim(0) ||
            (causal && q_segs[s].length != k_segs[s].length)) {
            throw DimensionError("attention segment " + std::to_string(s) + " out of range");
        }
    }
    const int dh = d / n_heads;
    const float scl = 1.0f / std::sqrt(static_cast<float>(dh));
    Tensor out(q.shape());
    auto qv = q.data();
    auto kv = k.data();
    auto vv = v.data();
    auto o = out.data();
    // probabilities, per segment and head, stored as [lq, lk]
    std::vector<std::size_t> p_off(q_segs.size() * n_heads + 1, 0);
    for (std::size_t s = 0; s < q_segs.size(); ++s)
        for (int h = 0; h < n_heads; ++h) {
            const std::size_t idx = s * n_heads + h;
            p_off[idx + 1] = p_off[idx] + static_cast<std::size_t>(q_segs[s].length) * k_segs[s].length;
        }
    std::vector<float> probs(p_off.back(), 0.0f);
    for (std::size_t s = 0; s < q_segs.size(); ++s) {
        const int lq = q_segs[s].length, lk = k_segs[s].length;
        for (int h = 0; h < n_heads; ++h) {
            float* p = probs.data() + p_off[s * n_heads + h];
            for (int i = 0; i < lq; ++i) {
                const float* qi = qv.data() + static_cast<std::size_t>(q_segs[s].offset + i) * d + h * dh;
                const int nk = causal ? i + 1 : lk;
                float* pi = p + static_cast<std::size_t>(i) * lk;
                float mx = -std::numeric_limits<float>::infinity();
                for (int j = 0; j < nk; ++j) {
                    const float* kj = kv.data() + static_cast<std::size_t>(k_segs[s].offset + j) * d + h * dh;
                    float dot = 0.0f;
                    for (int c = 0; c < dh; ++c) dot += qi[c] * kj[c];
                    pi[j] = dot * scl;
                    mx = std::max(mx, pi[j]);
                }
                float z = 0.0f;
                for (int j = 0; j < nk; ++j) {
                    pi[j] = std::exp(pi[j] - mx);
                    z += pi[j];
                }
                const float inv = 1.0f / z;
                float* oi = o.data() + static_cast<std::size_t>(q_segs[s].offset + i) * d + h * dh;
                for (int j = 0; j < nk; ++j) {
                    pi[j] *= inv;
                    const float* vj = vv.data() + static_cast<std::size_t>(k_segs[s].offset + j) * d + h * dh;
                    for (int c = 0; c < dh; ++c) oi[c] += pi[j] * vj[c];
                }
            }
        }
    }
    if (tape.wants({&q, &k, &v})) {
        tape.record(OpKind::attention, {&q, &k, &v}, out,
                    [q, k, v, out, probs = std::move(probs), p_off = std::move(p_off),
                     qs = std::vector<Segment>(q_segs.begin(), q_segs.end()),
                     ks = std::vector<Segment>(k_segs.begin(), k_segs.end()), n_heads, causal, d, dh,
                     scl]() mutable {
                        auto g = out.grad();
                        auto qv2 = q.data();
                        auto kv2 = k.data();
                        auto vv2 = v.data();
                        std::span<float> gq = q.requires_grad() ? q.grad() : std::span<float>{};
                        std::span<float> gk = k.requires_grad() ? k.grad() : std::span<float>{};
                        std::span<float> gvv = v.requires_grad() ? v.grad() : std::span<float>{};
                        std::vector<float> dp;
                        for (std::size_t s = 0; s < qs.size(); ++s) {
                            const int lq = qs[s].length, lk = ks[s].length;
                            dp.assign(static_cast<std::size_t>(lk), 0.0f);
                            for (int h = 0; h < n_heads; ++h) {
                                const float* p = probs.data() + p_off[s * n_heads + h];
                                for (int i = 0; i < lq; ++i) {
                                    const int nk = causal ? i + 1 : lk;
                                    const float* pi = p + static_cast<std::size_t>(i) * lk;
                                    const float* gi = g.data() + static_cast<std::size_t>(qs[s].offset + i) * d + h * dh;
                                    float dot = 0.0f;
                                    for (int j = 0; j < nk; ++j) {
                                        const std::size_t vrow = static_cast<std::size_t>(ks[s].offset + j) * d + h * dh;
                                        float acc = 0.0f;
                                        for (int c = 0; c < dh; ++c) acc += gi[c] * vv2[vrow + c];
                                        dp[j] = acc;
                                        dot += pi[j] * acc;
                                        if (!gvv.empty())
                                            for (int c = 0; c < dh; ++c) gvv[vrow + c] += pi[j] * gi[c];
                                    }
                                    const std::size_t qrow = static_cast<std::size_t>(qs[s].offset + i) * d + h * dh;
                                    for (int j = 0; j < nk; ++j) {
                                        const float ds = pi[j] * (dp[j] - dot) * scl;
                                        if (ds == 0.0f) continue;
                                        const std::size_t krow = static_cast<std::size_t>(ks[s].offset + j) * d + h * dh;
                                        if (!gq.empty())
                                            for (int c = 0; c < dh; ++c) gq[qrow + c] += ds * kv2[krow + c];
                                        if (!gk.empty())
                                            for (int c = 0; c < dh; ++c) gk[krow + c] += ds * qv2[qrow + c];
                                    }
                                }
                            }
                        }
                    });
    }
    return out;
}

}  // namespace ciit::ad

#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "ciit/errors.hpp"
#include "ciit/evaluation/reps.hpp"

namespace ciit::eval {

struct Pca2d {
    std::vector<std::array<double, 2>> coords;   // one per input row
    std::array<std::vector<double>, 2> components;
    std::array<double, 2> eigenvalues{};          // projected variances
    double total_variance = 0;
    int iterations[2] = {0, 0};
};

/// Top-2 principal components by power iteration on the covariance with
/// deflation. Each component is flipped so its largest-magnitude loading is
/// positive. Covariances use the n-1 denominator.
inline Pca2d pca_2d(const std::vector<std::vector<double>>& rows, double tol = 1e-8, int max_iter = 1000) {
    if (rows.size() < 3) throw DegenerateDataError("PCA needs at least 3 vectors, got " + std::to_string(rows.size()));
    const std::size_t n = rows.size(), d = rows[0].size();
    if (d < 2) throw DegenerateDataError("PCA needs at least 2 dimensions");
    for (const auto& r : rows)
        if (r.size() != d) throw DimensionError("PCA rows differ in width");
    std::vector<double> mean(d, 0.0);
    for (const auto& r : rows)
        for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
    for (auto& x : mean) x /= static_cast<double>(n);
    std::vector<double> cov(d * d, 0.0);
    for (const auto& r : rows)
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += (r[a] - mean[a]) * (r[b] - mean[b]);
    for (auto& x : cov) x /= static_cast<double>(n - 1);

    Pca2d out;
    for (std::size_t j = 0; j < d; ++j) out.total_variance += cov[j * d + j];
    if (!(out.total_variance > 0)) throw DegenerateDataError("all vectors are identical (rank 0)");

    auto matvec = [&](const std::vector<double>& v) {
        std::vector<double> w(d, 0.0);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) w[a] += cov[a * d + b] * v[b];
        return w;
    };
    auto normalize = [](std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x * x;
        s = std::sqrt(s);
        if (s > 0)
            for (auto& x : v) x /= s;
        return s;
    };
    // keeps the second component orthogonal to the first even when the
    // deflated matrix is numerically zero
    auto orthogonalize = [&](std::vector<double>& v, int c) {
        if (c == 0) return;
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += v[j] * out.components[0][j];
        for (std::size_t j = 0; j < d; ++j) v[j] -= dot * out.components[0][j];
    };
    for (int c = 0; c < 2; ++c) {
        std::vector<double> v(d);
        for (std::size_t j = 0; j < d; ++j) v[j] = 1.0 + 0.1 * static_cast<double>(j);
        orthogonalize(v, c);
        normalize(v);
        int it = 0;
        for (; it < max_iter; ++it) {
            auto w = matvec(v);
            orthogonalize(w, c);
            if (normalize(w) < 1e-12 * out.total_variance) break;  // v lies in the null space
            double diff = 0;
            for (std::size_t j = 0; j < d; ++j) diff = std::max(diff, std::abs(w[j] - v[j]));
            v = std::move(w);
            if (diff < tol) break;
        }
        out.iterations[c] = it;
        std::size_t big = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (std::abs(v[j]) > std::abs(v[big])) big = j;
        if (v[big] < 0)
            for (auto& x : v) x = -x;
        const auto cv = matvec(v);
        double lambda = 0;
        for (std::size_t j = 0; j < d; ++j) lambda += v[j] * cv[j];
        out.eigenvalues[c] = lambda;
        out.components[c] = v;
        // deflate
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
    }
    out.coords.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 2; ++c) {
            double s = 0;
            for (std::size_t j = 0; j < d; ++j) s += (rows[i][j] - mean[j]) * out.components[c][j];
            out.coords[i][c] = s;
        }
    return out;
}

inline Pca2d pca_2d(const CharRepTable& t) {
    std::vector<std::vector<double>> rows;
    rows.reserve(t.rows.size());
    for (const auto& r : t.rows) rows.emplace_back(r.vec.begin(), r.vec.end());
    return pca_2d(rows);
}

inline void write_pca_csv(const std::string& path, const CharRepTable& t, const Pca2d& p) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw PathError("cannot write " + path);
    f << "character,token,position,pc1,pc2\n";
    char buf[64];
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g", p.coords[i][0], p.coords[i][1]);
        f << t.rows[i].character << ',' << t.rows[i].token << ',' << t.rows[i].position << ',' << buf << '\n';
    }
}

}  // namespace ciit::eval

#pragma once

// Distance covariance and distance correlation (V-statistic form) over
// Euclidean distances between flattened samples.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdnb/metrics/signal.hpp"

namespace cdnb::metrics {

/// Fixed-order pairwise summation; the result depends only on the input order.
inline double pairwise_sum(std::span<const double> v) {
    constexpr std::size_t block = 64;
    if (v.size() <= block) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

struct DistanceMatrix {
    std::size_t n = 0;
    std::vector<double> values;  // row-major n x n
    bool centered = false;

    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
    [[nodiscard]] std::span<const double> row(std::size_t i) const {
        return std::span<const double>(values).subspan(i * n, n);
    }
};

inline DistanceMatrix pairwise_distances(const SignalBatch& batch) {
    const std::size_t n = batch.size();
    if (n < 2) {
        throw std::invalid_argument(std::string("pairwise_distances: signal ") + to_string(batch.name()) +
                                    " needs at least 2 samples, got " + std::to_string(n));
    }
    const std::size_t d = batch.dim();
    const double* v = batch.values().data();
    DistanceMatrix D{n, std::vector<double>(n * n, 0.0), false};
    for (std::size_t i = 0; i < n; ++i) {
        const double* a = v + i * d;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double* b = v + j * d;
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double t = a[k] - b[k];
                s += t * t;
            }
            const double dist = std::sqrt(s);
            D.values[i * n + j] = dist;
            D.values[j * n + i] = dist;
        }
    }
    return D;
}

/// A_ij = D_ij - mean(row i) - mean(col j) + grand mean.
inline DistanceMatrix double_center(const DistanceMatrix& D) {
    const std::size_t n = D.n;
    std::vector<double> row_mean(n), col_mean(n, 0.0);
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) row_mean[i] = pairwise_sum(D.row(i)) / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = D.values[i * n + j];
        col_mean[j] = pairwise_sum(col) / static_cast<double>(n);
    }
    const double grand = pairwise_sum(row_mean) / static_cast<double>(n);
    DistanceMatrix A{n, std::vector<double>(n * n), true};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            A.values[i * n + j] = D.values[i * n + j] - row_mean[i] - col_mean[j] + grand;
    return A;
}

/// sqrt(max(0, mean(A .* B))) for double-centred A and B.
inline double distance_covariance(const DistanceMatrix& A, const DistanceMatrix& B) {
    if (A.n != B.n) {
        throw std::invalid_argument("distance_covariance: size mismatch " + std::to_string(A.n) + " vs " +
                                    std::to_string(B.n));
    }
    if (!A.centered || !B.centered) {
        throw std::invalid_argument("distance_covariance: inputs must be double-centred");
    }
    const std::size_t n = A.n;
    std::vector<double> row_sums(n);
    std::vector<double> prod(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) prod[j] = A.values[i * n + j] * B.values[i * n + j];
        row_sums[i] = pairwise_sum(prod);
    }
    const double m = pairwise_sum(row_sums) / (static_cast<double>(n) * static_cast<double>(n));
    return std::sqrt(std::max(0.0, m));
}

/// dCov(A,B) / sqrt(dCov(A,A) dCov(B,B)), 0 when either batch is constant.
inline double distance_correlation(const DistanceMatrix& A, const DistanceMatrix& B) {
    const double vab = distance_covariance(A, B);
    const double vaa = distance_covariance(A, A);
    const double vbb = distance_covariance(B, B);
    const double denom = std::sqrt(vaa * vbb);
    if (!(denom > 0.0)) return 0.0;
    return std::clamp(vab / denom, 0.0, 1.0);
}

inline double distance_correlation(const SignalBatch& u, const SignalBatch& v) {
    if (u.size() < 2 || v.size() < 2) {
        throw std::invalid_argument("distance_correlation: need at least 2 samples");
    }
    if (u.size() != v.size()) {
        throw std::invalid_argument("distance_correlation: paired batches differ in size (" +
                                    std::to_string(u.size()) + " vs " + std::to_string(v.size()) + ")");
    }
    return distance_correlation(double_center(pairwise_distances(u)), double_center(pairwise_distances(v)));
}

}  // namespace cdnb::metrics

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sds/error.hpp"
#include "sds/matrix.hpp"

namespace sds {

namespace detail {

/// Plain lower Cholesky on a double buffer (row-major n x n).
/// Returns false on a non-positive pivot.
inline bool cholesky_lower(std::vector<double>& a, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
        if (d <= 0.0 || !std::isfinite(d)) return false;
        const double ljj = std::sqrt(d);
        a[j * n + j] = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / ljj;
        }
    }
    // zero the strict upper triangle so the buffer is exactly L
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
    return true;
}

/// Cholesky tolerant of positive semi-definite input: a non-positive pivot
/// (within tol of 0) zeroes its column instead of failing. Used for the
/// rank-deficient correlation factors; invert_spd stays strict.
inline void cholesky_psd(std::vector<double>& a, std::size_t n, double tol = 1e-12) {
    for (std::size_t j = 0; j < n; ++j) {
        double d = a[j * n + j];
        for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
        if (d <= tol) {
            for (std::size_t i = j; i < n; ++i) a[i * n + j] = 0.0;
            continue;
        }
        const double ljj = std::sqrt(d);
        a[j * n + j] = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            a[i * n + j] = s / ljj;
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
}

}  // namespace detail

/// (H + damp * mean(diag H) * I)^-1 via Cholesky, all in double internally.
/// H must be square and symmetric within 1e-5 of its largest entry. The
/// result is mirrored from its lower triangle, so it is exactly symmetric.
inline DenseMatrix invert_spd(const DenseMatrix& h, double damp) {
    if (h.rows() != h.cols()) {
        throw DimensionError("invert_spd: matrix not square, " + h.shape_string());
    }
    if (damp < 0.0) throw ConfigError("invert_spd: damp must be >= 0");
    const std::size_t n = h.rows();
    double max_abs = 0.0;
    for (float v : h.values()) max_abs = std::max(max_abs, static_cast<double>(std::fabs(v)));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::fabs(static_cast<double>(h(i, j)) - static_cast<double>(h(j, i))) >
                1e-5 * std::max(max_abs, 1e-30)) {
                throw NumericError("invert_spd: matrix not symmetric at (" + std::to_string(i) +
                                   "," + std::to_string(j) + ")");
            }
        }
    }

    std::vector<double> a(n * n);
    double diag_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) diag_mean += h(i, i);
    diag_mean = n > 0 ? diag_mean / static_cast<double>(n) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) a[i * n + j] = h(i, j);
        a[i * n + i] += damp * diag_mean;
    }
    if (!detail::cholesky_lower(a, n)) {
        throw NumericError(
            "invert_spd: Cholesky failed, matrix not positive definite after dampening; "
            "raise damp");
    }

    // M = L^-1 by forward substitution, then H^-1 = M^T M.
    std::vector<double> m(n * n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        m[c * n + c] = 1.0 / a[c * n + c];
        for (std::size_t i = c + 1; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = c; k < i; ++k) s += a[i * n + k] * m[k * n + c];
            m[i * n + c] = -s / a[i * n + i];
        }
    }
    DenseMatrix inv(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = j; k < n; ++k) s += m[k * n + i] * m[k * n + j];
            const float v = static_cast<float>(s);
            inv(i, j) = v;
            inv(j, i) = v;
        }
    }
    return inv;
}

}  // namespace sds

#pragma once

// Shared test utilities. The oracles here stay independent of the library
// paths they check: scalar-loop matmul, Gauss-Jordan solves, explicit sums.

#include <cmath>
#include <cstdint>
#include <vector>

#include "sds/matrix.hpp"
#include "sds/rng.hpp"

namespace testutil {

/// Independent scalar-loop product in double; the matmul oracle.
inline sds::DenseMatrix matmul_oracle(const sds::DenseMatrix& a, const sds::DenseMatrix& b) {
    sds::DenseMatrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += static_cast<double>(a(i, k)) * static_cast<double>(b(k, j));
            }
            c(i, j) = static_cast<float>(acc);
        }
    }
    return c;
}

/// Gauss-Jordan solve A y = rhs in double with partial pivoting. Independent
/// of the library's Cholesky path.
inline std::vector<double> solve_oracle(std::vector<double> a, std::vector<double> rhs,
                                        std::size_t n) {
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::fabs(a[r * n + c]) > std::fabs(a[piv * n + c])) piv = r;
        }
        for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[piv * n + k]);
        std::swap(rhs[c], rhs[piv]);
        const double d = a[c * n + c];
        for (std::size_t k = 0; k < n; ++k) a[c * n + k] /= d;
        rhs[c] /= d;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a[r * n + c];
            if (f == 0.0) continue;
            for (std::size_t k = 0; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
            rhs[r] -= f * rhs[c];
        }
    }
    return rhs;
}

inline std::vector<double> to_f64(const sds::DenseMatrix& m) {
    std::vector<double> v(m.numel());
    for (std::size_t i = 0; i < m.numel(); ++i) v[i] = m.data()[i];
    return v;
}

/// Random matrix helper on top of the library rng.
inline sds::DenseMatrix random_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols,
                                      float std = 1.0f) {
    sds::Rng rng(seed);
    return sds::gaussian(rng, rows, cols, 0.0f, std);
}

/// ||(W' - W) X||_F^2 in double.
inline double weighted_error(const sds::DenseMatrix& wp, const sds::DenseMatrix& w,
                             const sds::DenseMatrix& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t t = 0; t < x.cols(); ++t) {
            double e = 0.0;
            for (std::size_t k = 0; k < w.cols(); ++k) {
                e += (static_cast<double>(wp(i, k)) - static_cast<double>(w(i, k))) *
                     static_cast<double>(x(k, t));
            }
            acc += e * e;
        }
    }
    return acc;
}

/// FNV-1a over a byte string; container checksum oracle.
inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace testutil

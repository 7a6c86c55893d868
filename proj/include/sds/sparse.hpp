#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "sds/matrix.hpp"
#include "sds/parallel.hpp"

namespace sds {

/// Compressed sparse rows. col_idx strictly increasing within each row.
struct CsrMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<std::size_t> row_ptr;  // length rows + 1
    std::vector<std::size_t> col_idx;
    std::vector<float> values;

    std::size_t nnz() const { return values.size(); }

    void validate() const {
        if (row_ptr.size() != rows + 1 || row_ptr.front() != 0 || row_ptr.back() != nnz() ||
            col_idx.size() != values.size()) {
            throw DimensionError("CsrMatrix: inconsistent structure");
        }
        for (std::size_t i = 0; i < rows; ++i) {
            if (row_ptr[i] > row_ptr[i + 1]) throw DimensionError("CsrMatrix: row_ptr decreases");
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
                if (col_idx[k] >= cols) throw DimensionError("CsrMatrix: column index out of range");
                if (k > row_ptr[i] && col_idx[k] <= col_idx[k - 1]) {
                    throw DimensionError("CsrMatrix: column indices not strictly increasing");
                }
            }
        }
    }
};

/// Entries with |value| <= zero_tol are dropped; lossless at the default 0.
inline CsrMatrix to_csr(const DenseMatrix& w, float zero_tol = 0.0f) {
    CsrMatrix c;
    c.rows = w.rows();
    c.cols = w.cols();
    c.row_ptr.reserve(w.rows() + 1);
    c.row_ptr.push_back(0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            const float v = w(i, j);
            if (std::fabs(v) <= zero_tol) continue;
            c.col_idx.push_back(j);
            c.values.push_back(v);
        }
        c.row_ptr.push_back(c.values.size());
    }
    return c;
}

inline DenseMatrix to_dense(const CsrMatrix& a) {
    DenseMatrix w(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
            w(i, a.col_idx[k]) = a.values[k];
        }
    }
    return w;
}

/// Sparse-dense product, rows independent, double accumulation.
inline DenseMatrix spmm(const CsrMatrix& a, const DenseMatrix& b, std::size_t threads = 1) {
    if (a.cols != b.rows()) {
        throw DimensionError("spmm: inner dimensions disagree, " + std::to_string(a.rows) + "x" +
                             std::to_string(a.cols) + " x " + b.shape_string());
    }
    DenseMatrix c(a.rows, b.cols());
    const std::size_t n = b.cols();
    parallel_for(a.rows, threads, [&](std::size_t i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
                acc += static_cast<double>(a.values[k]) * static_cast<double>(b(a.col_idx[k], j));
            }
            c(i, j) = static_cast<float>(acc);
        }
    });
    return c;
}

struct BenchReport {
    double dense_ms = 0.0;
    double sparse_ms = 0.0;
    double speedup = 0.0;
    double nnz_fraction = 0.0;

    nlohmann::json to_json() const {
        return {{"dense_ms", dense_ms},
                {"sparse_ms", sparse_ms},
                {"speedup", speedup},
                {"nnz_fraction", nnz_fraction}};
    }
};

namespace detail {

template <typename Fn>
double median_wall_ms(std::size_t repeats, Fn&& fn) {
    std::vector<double> times(repeats);
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        times[r] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    std::sort(times.begin(), times.end());
    return times[repeats / 2];
}

}  // namespace detail

/// Wall-clock comparison of the dense path (matmul) against the CSR path on
/// the same inputs. Outputs are cross-checked at 1e-5 relative before any
/// timing; both paths run single-threaded unless `threads` says otherwise.
/// Speedups are reported, never asserted -- they are hardware facts.
inline BenchReport bench(const DenseMatrix& w_dense, const DenseMatrix& w_sparse,
                         const DenseMatrix& x, std::size_t repeats, std::size_t threads = 1) {
    if (repeats < 3) throw ConfigError("bench: repeats must be >= 3");
    if (!w_dense.same_shape(w_sparse)) {
        throw DimensionError("bench: dense " + w_dense.shape_string() + " vs sparse " +
                             w_sparse.shape_string());
    }
    const CsrMatrix csr = to_csr(w_sparse);
    const DenseMatrix ref = matmul(w_sparse, x, threads);
    const DenseMatrix got = spmm(csr, x, threads);
    if (relative_frobenius(got, ref) > 1e-5) {
        throw NumericError("bench: sparse path disagrees with dense oracle; aborting");
    }

    BenchReport report;
    report.nnz_fraction =
        static_cast<double>(csr.nnz()) / static_cast<double>(w_sparse.numel());
    report.dense_ms = detail::median_wall_ms(repeats, [&] { (void)matmul(w_dense, x, threads); });
    report.sparse_ms = detail::median_wall_ms(repeats, [&] { (void)spmm(csr, x, threads); });
    report.speedup = report.sparse_ms > 0.0 ? report.dense_ms / report.sparse_ms : 0.0;
    return report;
}

}  // namespace sds

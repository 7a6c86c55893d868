#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "sds/error.hpp"
#include "sds/parallel.hpp"

namespace sds {

/// Row-major dense matrix of 32-bit floats. All arithmetic on it accumulates
/// in 64-bit and rounds to 32-bit on store.
class DenseMatrix {
public:
    DenseMatrix() : rows_(0), cols_(0) {}
    DenseMatrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw DimensionError("DenseMatrix: data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string());
        }
    }

    /// Build from nested init lists; test and example convenience.
    static DenseMatrix from_rows(std::initializer_list<std::initializer_list<float>> rows) {
        std::size_t r = rows.size();
        std::size_t c = r == 0 ? 0 : rows.begin()->size();
        DenseMatrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw DimensionError("from_rows: ragged rows");
            std::size_t j = 0;
            for (float v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t numel() const { return rows_ * cols_; }

    float& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    float operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    const std::vector<float>& values() const { return data_; }

    std::string shape_string() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    bool same_shape(const DenseMatrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::size_t rows_, cols_;
    std::vector<float> data_;
};

/// c[i][j] = sum_k a[i][k] * b[k][j], accumulated in double.
/// Rows are independent; `threads > 1` splits them without changing results.
inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b, std::size_t threads = 1) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree, " + a.shape_string() + " x " +
                             b.shape_string());
    }
    DenseMatrix c(a.rows(), b.cols());
    const std::size_t n = b.cols(), k = a.cols();
    parallel_for(a.rows(), threads, [&](std::size_t i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) {
                acc += static_cast<double>(a(i, kk)) * static_cast<double>(b(kk, j));
            }
            c(i, j) = static_cast<float>(acc);
        }
    });
    return c;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
    DenseMatrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// scale * X * X^T, accumulated in double, exactly symmetric by construction.
inline DenseMatrix gram_scaled(const DenseMatrix& x, double scale) {
    const std::size_t d = x.rows(), n = x.cols();
    DenseMatrix g(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                acc += static_cast<double>(x(i, t)) * static_cast<double>(x(j, t));
            }
            float v = static_cast<float>(scale * acc);
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

inline double frobenius_norm(const DenseMatrix& a) {
    double acc = 0.0;
    for (float v : a.values()) acc += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(acc);
}

/// ||a - b||_F / max(||b||_F, tiny); the usual relative-error yardstick.
inline double relative_frobenius(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("relative_frobenius: shapes disagree, " + a.shape_string() +
                             " vs " + b.shape_string());
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        num += d * d;
        den += static_cast<double>(b.data()[i]) * static_cast<double>(b.data()[i]);
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

/// Mean of squared entrywise differences, accumulated in double.
inline double mean_squared_error(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("mean_squared_error: shapes disagree, " + a.shape_string() +
                             " vs " + b.shape_string());
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        acc += d * d;
    }
    return a.numel() == 0 ? 0.0 : acc / static_cast<double>(a.numel());
}

}  // namespace sds

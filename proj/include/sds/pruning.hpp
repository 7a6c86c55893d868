#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "sds/calibration.hpp"
#include "sds/linalg.hpp"
#include "sds/matrix.hpp"

namespace sds {

// ---------------------------------------------------------------------------
// Sparsity patterns and masks
// ---------------------------------------------------------------------------

/// Unstructured{ratio in (0,1)} or N:M (n_keep nonzeros per aligned group of
/// m_group consecutive weights along the input dimension of each row).
struct SparsityPattern {
    enum class Kind { Unstructured, NM };

    Kind kind = Kind::Unstructured;
    double ratio = 0.5;        // fraction pruned, unstructured only
    std::size_t n_keep = 0;    // N:M only
    std::size_t m_group = 0;

    static SparsityPattern unstructured(double ratio) {
        if (!(ratio > 0.0 && ratio < 1.0)) {
            throw ConfigError("invalid pattern: unstructured ratio " + std::to_string(ratio) +
                              " must be in (0, 1)");
        }
        SparsityPattern p;
        p.kind = Kind::Unstructured;
        p.ratio = ratio;
        return p;
    }

    static SparsityPattern nm(std::size_t n_keep, std::size_t m_group) {
        if (n_keep == 0 || n_keep >= m_group) {
            throw ConfigError("invalid pattern: " + std::to_string(n_keep) + ":" +
                              std::to_string(m_group) + " requires 0 < N < M");
        }
        SparsityPattern p;
        p.kind = Kind::NM;
        p.n_keep = n_keep;
        p.m_group = m_group;
        return p;
    }

    /// "0.5" -> unstructured, "2:4" -> N:M.
    static SparsityPattern parse(const std::string& s) {
        const auto colon = s.find(':');
        try {
            if (colon == std::string::npos) {
                std::size_t used = 0;
                const double r = std::stod(s, &used);
                if (used != s.size()) throw ConfigError("");
                return unstructured(r);
            }
            std::size_t used_n = 0, used_m = 0;
            const unsigned long n = std::stoul(s.substr(0, colon), &used_n);
            const unsigned long m = std::stoul(s.substr(colon + 1), &used_m);
            if (used_n != colon || used_m != s.size() - colon - 1) throw ConfigError("");
            return nm(n, m);
        } catch (const ConfigError&) {
            throw ConfigError("invalid pattern '" + s + "'");
        } catch (const std::exception&) {
            throw ConfigError("invalid pattern '" + s + "'");
        }
    }

    bool is_nm() const { return kind == Kind::NM; }

    /// Kept fraction the pattern asks for.
    double density() const {
        return is_nm() ? static_cast<double>(n_keep) / static_cast<double>(m_group)
                       : 1.0 - ratio;
    }

    std::string to_string() const {
        if (is_nm()) return std::to_string(n_keep) + ":" + std::to_string(m_group);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", ratio);
        return buf;
    }
};

/// Ranking scope for unstructured selection: one quota across the whole layer
/// or a quota per output row.
enum class UnstructuredScope { LayerGlobal, RowLocal };

/// Boolean keep-matrix; true = weight survives.
struct Mask {
    std::size_t rows = 0, cols = 0;
    std::vector<std::uint8_t> bits;  // row-major, 1 = kept

    Mask() = default;
    Mask(std::size_t r, std::size_t c, bool kept = false)
        : rows(r), cols(c), bits(r * c, kept ? 1 : 0) {}

    bool kept(std::size_t i, std::size_t j) const { return bits[i * cols + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { bits[i * cols + j] = v ? 1 : 0; }

    std::size_t kept_count() const {
        std::size_t n = 0;
        for (auto b : bits) n += b;
        return n;
    }

    double density() const {
        return bits.empty() ? 0.0
                            : static_cast<double>(kept_count()) / static_cast<double>(bits.size());
    }

    DenseMatrix apply(const DenseMatrix& w) const {
        if (w.rows() != rows || w.cols() != cols) {
            throw DimensionError("mask shape " + std::to_string(rows) + "x" +
                                 std::to_string(cols) + " does not match weights " +
                                 w.shape_string());
        }
        DenseMatrix out = w;
        for (std::size_t i = 0; i < out.numel(); ++i)
            if (!bits[i]) out.data()[i] = 0.0f;
        return out;
    }

    /// True when the mask satisfies the pattern exactly: the kept count under
    /// the documented rounding for unstructured, exactly n_keep kept per
    /// aligned m-group for N:M.
    bool conforms(const SparsityPattern& pattern,
                  UnstructuredScope scope = UnstructuredScope::LayerGlobal) const;
};

namespace detail {

inline std::size_t round_half_up(double x) {
    return static_cast<std::size_t>(std::floor(x + 0.5));
}

/// Indices of the k largest scores; ties keep the lower index. `stride`
/// walks a row (stride 1) or any other slice of the score buffer.
inline void keep_topk(const float* scores, std::size_t count, std::size_t k,
                      std::vector<std::size_t>& order_buf, std::uint8_t* kept,
                      std::size_t kept_stride) {
    order_buf.resize(count);
    std::iota(order_buf.begin(), order_buf.end(), std::size_t{0});
    std::sort(order_buf.begin(), order_buf.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    for (std::size_t r = 0; r < count; ++r) kept[r * kept_stride] = 0;
    for (std::size_t r = 0; r < k && r < count; ++r) kept[order_buf[r] * kept_stride] = 1;
}

}  // namespace detail

inline bool Mask::conforms(const SparsityPattern& pattern, UnstructuredScope scope) const {
    if (pattern.is_nm()) {
        if (cols % pattern.m_group != 0) return false;
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t g = 0; g < cols; g += pattern.m_group) {
                std::size_t kept_in_group = 0;
                for (std::size_t j = 0; j < pattern.m_group; ++j) {
                    kept_in_group += kept(i, g + j) ? 1 : 0;
                }
                if (kept_in_group != pattern.n_keep) return false;
            }
        }
        return true;
    }
    if (scope == UnstructuredScope::LayerGlobal) {
        return kept_count() ==
               detail::round_half_up((1.0 - pattern.ratio) * static_cast<double>(rows * cols));
    }
    const std::size_t per_row =
        detail::round_half_up((1.0 - pattern.ratio) * static_cast<double>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        std::size_t n = 0;
        for (std::size_t j = 0; j < cols; ++j) n += kept(i, j) ? 1 : 0;
        if (n != per_row) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Layer Hessian
// ---------------------------------------------------------------------------

/// Accumulates H = (2/n) X X^T over calibration tokens. The raw Gram sum is
/// kept in double and token order, so splitting a batch in two accumulates
/// bit-identically to one pass.
struct HessianState {
    std::size_t dim = 0;
    std::size_t n_tokens = 0;
    double damp_fraction = 0.01;
    std::vector<double> gram2;  // 2 * sum_t x_t x_t^T, row-major dim x dim

    explicit HessianState(std::size_t d, double damp = 0.01)
        : dim(d), damp_fraction(damp), gram2(d * d, 0.0) {}

    void accumulate(const DenseMatrix& x) {
        if (x.rows() != dim) {
            throw DimensionError("accumulate_hessian: expected " + std::to_string(dim) +
                                 " feature rows, got " + x.shape_string());
        }
        if (x.cols() == 0) throw DimensionError("accumulate_hessian: empty calibration");
        for (std::size_t t = 0; t < x.cols(); ++t) {
            for (std::size_t i = 0; i < dim; ++i) {
                const double xi = x(i, t);
                for (std::size_t j = i; j < dim; ++j) {
                    gram2[i * dim + j] += 2.0 * xi * static_cast<double>(x(j, t));
                }
            }
        }
        n_tokens += x.cols();
    }

    DenseMatrix hessian() const {
        if (n_tokens == 0) throw DimensionError("accumulate_hessian: empty calibration");
        DenseMatrix h(dim, dim);
        const double inv_n = 1.0 / static_cast<double>(n_tokens);
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = i; j < dim; ++j) {
                const float v = static_cast<float>(gram2[i * dim + j] * inv_n);
                h(i, j) = v;
                h(j, i) = v;
            }
        }
        return h;
    }

    DenseMatrix inverse() const { return invert_spd(hessian(), damp_fraction); }
};

inline HessianState accumulate_hessian(const DenseMatrix& x, double damp_fraction = 0.01) {
    HessianState state(x.rows(), damp_fraction);
    state.accumulate(x);
    return state;
}

// ---------------------------------------------------------------------------
// Saliency
// ---------------------------------------------------------------------------

enum class PruneMethod { SparseGPT, Wanda, Magnitude };

inline std::string to_string(PruneMethod m) {
    switch (m) {
        case PruneMethod::SparseGPT: return "sparsegpt";
        case PruneMethod::Wanda: return "wanda";
        default: return "magnitude";
    }
}

namespace detail {

inline void check_scores_finite(const DenseMatrix& s, const char* what) {
    for (std::size_t i = 0; i < s.rows(); ++i) {
        for (std::size_t j = 0; j < s.cols(); ++j) {
            if (!std::isfinite(s(i, j))) {
                throw NumericError(std::string(what) + ": non-finite score at (" +
                                   std::to_string(i) + "," + std::to_string(j) + ")");
            }
        }
    }
}

}  // namespace detail

inline DenseMatrix saliency_magnitude(const DenseMatrix& w) {
    DenseMatrix s(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.numel(); ++i) s.data()[i] = std::fabs(w.data()[i]);
    detail::check_scores_finite(s, "saliency_magnitude");
    return s;
}

/// |w[i][j]| * ||X_j||_2 with the norm taken across calibration tokens.
inline DenseMatrix saliency_wanda(const DenseMatrix& w, const std::vector<float>& norms) {
    if (norms.size() != w.cols()) {
        throw DimensionError("saliency_wanda: " + std::to_string(norms.size()) +
                             " feature norms for " + std::to_string(w.cols()) + " columns");
    }
    DenseMatrix s(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) s(i, j) = std::fabs(w(i, j)) * norms[j];
    detail::check_scores_finite(s, "saliency_wanda");
    return s;
}

/// w[i][j]^2 / (H^-1[j][j])^2.
inline DenseMatrix saliency_sparsegpt(const DenseMatrix& w, const DenseMatrix& hinv) {
    if (hinv.rows() != hinv.cols() || hinv.rows() != w.cols()) {
        throw DimensionError("saliency_sparsegpt: H^-1 is " + hinv.shape_string() +
                             " for weights " + w.shape_string());
    }
    DenseMatrix s(w.rows(), w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
        const double d = hinv(j, j);
        for (std::size_t i = 0; i < w.rows(); ++i) {
            const double wij = w(i, j);
            s(i, j) = static_cast<float>(wij * wij / (d * d));
        }
    }
    detail::check_scores_finite(s, "saliency_sparsegpt");
    return s;
}

// ---------------------------------------------------------------------------
// Mask selection
// ---------------------------------------------------------------------------

/// Keep the highest scores under the pattern. Ties everywhere go to the lower
/// flat index. Unstructured keeps round((1-ratio) * numel) scores across the
/// layer (or per row under RowLocal); N:M keeps the n_keep best per aligned
/// group of m.
inline Mask select_mask(const DenseMatrix& s, const SparsityPattern& pattern,
                        UnstructuredScope scope = UnstructuredScope::LayerGlobal) {
    detail::check_scores_finite(s, "select_mask");
    Mask mask(s.rows(), s.cols());
    std::vector<std::size_t> order;
    if (pattern.is_nm()) {
        const std::size_t m = pattern.m_group;
        if (s.cols() % m != 0) {
            throw DimensionError("select_mask: row length " + std::to_string(s.cols()) +
                                 " not divisible by group size " + std::to_string(m));
        }
        for (std::size_t i = 0; i < s.rows(); ++i) {
            for (std::size_t g = 0; g < s.cols(); g += m) {
                detail::keep_topk(&s.data()[i * s.cols() + g], m, pattern.n_keep, order,
                                  &mask.bits[i * s.cols() + g], 1);
            }
        }
        return mask;
    }
    if (scope == UnstructuredScope::RowLocal) {
        const std::size_t k =
            detail::round_half_up((1.0 - pattern.ratio) * static_cast<double>(s.cols()));
        for (std::size_t i = 0; i < s.rows(); ++i) {
            detail::keep_topk(&s.data()[i * s.cols()], s.cols(), k, order,
                              &mask.bits[i * s.cols()], 1);
        }
        return mask;
    }
    const std::size_t k =
        detail::round_half_up((1.0 - pattern.ratio) * static_cast<double>(s.numel()));
    detail::keep_topk(s.data(), s.numel(), k, order, mask.bits.data(), 1);
    return mask;
}

// ---------------------------------------------------------------------------
// One-shot pruners
// ---------------------------------------------------------------------------

struct PruneResult {
    DenseMatrix weights;
    Mask mask;
};

/// Mask-only pruning by |w|; kept entries are bit-identical to the input.
inline PruneResult prune_magnitude(const DenseMatrix& w, const SparsityPattern& pattern,
                                   UnstructuredScope scope = UnstructuredScope::LayerGlobal) {
    Mask mask = select_mask(saliency_magnitude(w), pattern, scope);
    return PruneResult{mask.apply(w), std::move(mask)};
}

/// Update-free pruning by |w| * ||X_j||_2. Row-local ranking is the default
/// for unstructured patterns; N:M ranks within each group either way.
inline PruneResult prune_wanda(const DenseMatrix& w, const DenseMatrix& x,
                               const SparsityPattern& pattern,
                               UnstructuredScope scope = UnstructuredScope::RowLocal) {
    if (x.rows() != w.cols()) {
        throw DimensionError("prune_wanda: activations " + x.shape_string() +
                             " do not match weights " + w.shape_string());
    }
    Mask mask = select_mask(saliency_wanda(w, feature_norms(x)), pattern, scope);
    return PruneResult{mask.apply(w), std::move(mask)};
}

/// Column-wise pruning with second-order compensation. Columns are finalized
/// left to right; pruning column c zeroes the selected weights and subtracts
/// err * Hinv[c, c:] from every affected row's remaining columns, where Hinv
/// is the running inverse of the Hessian restricted to the not-yet-finalized
/// columns (maintained by rank-1 elimination after each column closes).
/// Unstructured masks are decided once up front; each N:M group's mask is
/// decided when its first column is reached, from the current weights.
inline PruneResult prune_sparsegpt(const DenseMatrix& w, const DenseMatrix& hinv,
                                   const SparsityPattern& pattern,
                                   UnstructuredScope scope = UnstructuredScope::LayerGlobal) {
    const std::size_t dout = w.rows(), din = w.cols();
    if (hinv.rows() != hinv.cols() || hinv.rows() != din) {
        throw DimensionError("prune_sparsegpt: H^-1 is " + hinv.shape_string() +
                             " for weights " + w.shape_string());
    }
    if (pattern.is_nm() && din % pattern.m_group != 0) {
        throw DimensionError("prune_sparsegpt: row length " + std::to_string(din) +
                             " not divisible by group size " + std::to_string(pattern.m_group));
    }

    std::vector<double> W(dout * din);
    for (std::size_t i = 0; i < w.numel(); ++i) W[i] = w.data()[i];
    std::vector<double> H(din * din);
    for (std::size_t i = 0; i < hinv.numel(); ++i) H[i] = hinv.data()[i];

    Mask mask(dout, din, true);
    if (!pattern.is_nm()) {
        mask = select_mask(saliency_sparsegpt(w, hinv), pattern, scope);
    }

    std::vector<std::size_t> order;
    std::vector<float> group_scores;
    for (std::size_t c = 0; c < din; ++c) {
        const double pivot = H[c * din + c];
        if (std::fabs(pivot) < 1e-12) {
            throw NumericError("prune_sparsegpt: H^-1 pivot at column " + std::to_string(c) +
                               " is below 1e-12; increase the dampening fraction");
        }
        if (pattern.is_nm() && c % pattern.m_group == 0) {
            // group selection from the current, already-compensated weights
            const std::size_t m = pattern.m_group;
            group_scores.resize(m);
            for (std::size_t i = 0; i < dout; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    const double d = H[(c + j) * din + (c + j)];
                    const double wij = W[i * din + c + j];
                    group_scores[j] = static_cast<float>(wij * wij / (d * d));
                    if (!std::isfinite(group_scores[j])) {
                        throw NumericError("prune_sparsegpt: non-finite score at (" +
                                           std::to_string(i) + "," + std::to_string(c + j) +
                                           ")");
                    }
                }
                detail::keep_topk(group_scores.data(), m, pattern.n_keep, order,
                                  &mask.bits[i * din + c], 1);
            }
        }
        for (std::size_t i = 0; i < dout; ++i) {
            if (mask.kept(i, c)) continue;
            const double err = W[i * din + c] / pivot;
            double* wrow = &W[i * din];
            const double* hrow = &H[c * din];
            for (std::size_t j = c; j < din; ++j) wrow[j] -= err * hrow[j];
            wrow[c] = 0.0;
        }
        // close column c: eliminate it from the running inverse
        for (std::size_t a = c + 1; a < din; ++a) {
            const double f = H[a * din + c] / pivot;
            if (f == 0.0) continue;
            double* arow = &H[a * din];
            const double* crow = &H[c * din];
            for (std::size_t b = c + 1; b < din; ++b) arow[b] -= f * crow[b];
        }
    }

    DenseMatrix out(dout, din);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out.data()[i] = mask.bits[i] ? static_cast<float>(W[i]) : 0.0f;
    }
    if (!out.all_finite()) {
        throw NumericError("prune_sparsegpt: non-finite weights after compensation");
    }
    return PruneResult{std::move(out), std::move(mask)};
}

}  // namespace sds

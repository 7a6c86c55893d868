#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "sds/linalg.hpp"
#include "sds/model.hpp"
#include "sds/rng.hpp"

namespace sds {

/// Which model's forward activations feed layer-wise optimization:
///   DD - the dense model (no error accumulation),
///   SD - the working sparse model, traced once per stage,
///   KD - the working model, re-forwarded after each layer's own update.
enum class DataMode { DD, SD, KD };

inline std::string to_string(DataMode m) {
    switch (m) {
        case DataMode::DD: return "dd";
        case DataMode::SD: return "sd";
        default: return "kd";
    }
}

/// Synthetic stand-in for calibration text segments: in_dim features per
/// token, one token per column. `correlation` keeps the generation
/// parameters around so multi-sample-data runs can redraw per stage.
struct CalibrationSet {
    DenseMatrix x0;  // in_dim x n_tokens
    std::uint64_t seed = 0;
    std::optional<float> correlation;  // set when generated, absent when loaded

    std::size_t in_dim() const { return x0.rows(); }
    std::size_t n_tokens() const { return x0.cols(); }
};

/// Per-layer inputs X_{l-1}: per_layer_inputs[l] is what layer l consumes.
struct ActivationTrace {
    std::vector<DenseMatrix> per_layer_inputs;
};

/// x0 = L G with G i.i.d. standard normal and L the (PSD-tolerant) Cholesky
/// factor of (1-rho) I + rho 11^T, so features carry pairwise correlation rho
/// while tokens stay independent. rho = 1 collapses to identical feature rows.
inline CalibrationSet make_calibration(std::uint64_t seed, std::size_t in_dim,
                                       std::size_t n_tokens, float correlation) {
    if (correlation < 0.0f || correlation > 1.0f) {
        throw ConfigError("make_calibration: correlation must be in [0, 1]");
    }
    Rng rng(seed);
    DenseMatrix g = gaussian(rng, in_dim, n_tokens, 0.0f, 1.0f);
    if (correlation == 0.0f) {
        return CalibrationSet{std::move(g), seed, correlation};
    }
    const std::size_t d = in_dim;
    std::vector<double> sigma(d * d, static_cast<double>(correlation));
    for (std::size_t i = 0; i < d; ++i) sigma[i * d + i] = 1.0;
    detail::cholesky_psd(sigma, d);
    DenseMatrix x0(d, n_tokens);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t t = 0; t < n_tokens; ++t) {
            double acc = 0.0;
            for (std::size_t k = 0; k <= i; ++k) {
                acc += sigma[i * d + k] * static_cast<double>(g(k, t));
            }
            x0(i, t) = static_cast<float>(acc);
        }
    }
    return CalibrationSet{std::move(x0), seed, correlation};
}

/// Input trace for every layer under the chosen paradigm. DD traces the dense
/// model, SD (and KD) trace the working model; the KD refreshes happen in the
/// pipeline, interleaved with per-layer updates, so KD here equals SD.
inline ActivationTrace collect_inputs(const LayerStack& dense, const LayerStack& working,
                                      const DenseMatrix& x0, DataMode mode,
                                      std::size_t threads = 1) {
    if (dense.layers.size() != working.layers.size()) {
        throw DimensionError("collect_inputs: dense and working models differ in depth");
    }
    for (std::size_t l = 0; l < dense.layers.size(); ++l) {
        if (!dense.layers[l].weight.same_shape(working.layers[l].weight)) {
            throw DimensionError("collect_inputs: layer " + std::to_string(l) +
                                 " shapes differ between dense and working models");
        }
    }
    const LayerStack& src = (mode == DataMode::DD) ? dense : working;
    ActivationTrace trace;
    trace.per_layer_inputs.reserve(src.layers.size());
    DenseMatrix cur = x0;
    for (std::size_t l = 0; l < src.layers.size(); ++l) {
        trace.per_layer_inputs.push_back(cur);
        if (l + 1 < src.layers.size()) {
            cur = layer_forward(src.layers[l], cur, l, threads);
        }
    }
    return trace;
}

/// l2 norm of each input feature (row of x) across tokens; the ||X_j||_2
/// factors of the activation-aware saliency.
inline std::vector<float> feature_norms(const DenseMatrix& x) {
    std::vector<float> norms(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t t = 0; t < x.cols(); ++t) {
            acc += static_cast<double>(x(i, t)) * static_cast<double>(x(i, t));
        }
        norms[i] = static_cast<float>(std::sqrt(acc));
    }
    return norms;
}

}  // namespace sds

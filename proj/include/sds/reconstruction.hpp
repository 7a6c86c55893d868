#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sds/matrix.hpp"
#include "sds/pruning.hpp"

namespace sds {

enum class Optimizer { GradientDescent, AdaptiveMoments };
enum class L2Form { Squared, Norm };
enum class MaskGradRouting { MaskedOnly, AllEntries };

/// Knobs for re-dense reconstruction and soft-mask adjustment. The loss is
/// normalized per element: data term over d_out * n output entries, both
/// regularizers over the d_out * d_in weight entries.
struct ReconConfig {
    std::size_t epochs = 200;
    double lr = 0.1;
    double lambda1 = 0.1;
    double lambda2 = 0.1;
    bool use_weight_reg = true;
    Optimizer optimizer = Optimizer::AdaptiveMoments;
    L2Form l2_form = L2Form::Squared;
    MaskGradRouting routing = MaskGradRouting::MaskedOnly;

    void validate() const {
        if (epochs < 1) throw ConfigError("recon: epochs must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("recon: lr must be > 0");
        if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("recon: lambdas must be >= 0");
    }
};

namespace detail {

/// Shared optimizer state for one weight buffer. Adaptive-moments uses the
/// usual two accumulators (0.9 / 0.999, eps 1e-8) with bias-corrected steps.
/// The L1 term is handled proximally: entries are soft-thresholded after the
/// smooth step. The adaptive threshold is scaled by the *raw* second-moment
/// denominator sqrt(v)+eps -- strong shrinkage while v is still warming up,
/// which keeps the residual sparse structure of the starting point alive,
/// relaxing as curvature information accumulates.
struct OptState {
    std::vector<double> m, v;
    std::size_t t = 0;

    explicit OptState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline void optimizer_step(std::vector<double>& w, const std::vector<double>& grad,
                           OptState& state, const ReconConfig& cfg, double l1_per_entry,
                           const std::uint8_t* update_mask) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    state.t += 1;
    if (cfg.optimizer == Optimizer::GradientDescent) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (update_mask && !update_mask[i]) continue;
            double x = w[i] - cfg.lr * grad[i];
            if (l1_per_entry > 0.0) {
                const double thr = cfg.lr * l1_per_entry;
                x = x > thr ? x - thr : (x < -thr ? x + thr : 0.0);
            }
            w[i] = x;
        }
        return;
    }
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (update_mask && !update_mask[i]) continue;
        const double g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        double x = w[i] - cfg.lr * mhat / (std::sqrt(vhat) + eps);
        if (l1_per_entry > 0.0) {
            const double thr = cfg.lr * l1_per_entry / (std::sqrt(state.v[i]) + eps);
            x = x > thr ? x - thr : (x < -thr ? x + thr : 0.0);
        }
        w[i] = x;
    }
}

/// d = (W - Wd) XX^T restricted to nothing; returns the data loss
/// sum <R, R XX^T> so callers get the Frobenius term without touching X.
inline double data_term_and_grad(const std::vector<double>& residual,
                                 const std::vector<double>& xxt, std::size_t dout,
                                 std::size_t din, std::vector<double>& rxxt) {
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < dout; ++i) {
        const double* r = &residual[i * din];
        double* o = &rxxt[i * din];
        for (std::size_t j = 0; j < din; ++j) {
            double acc = 0.0;
            const double* col = &xxt[j * din];
            for (std::size_t k = 0; k < din; ++k) acc += r[k] * col[k];
            o[j] = acc;
            loss_sum += acc * r[j];
        }
    }
    return loss_sum;
}

inline std::vector<double> gram_f64(const DenseMatrix& x) {
    const std::size_t d = x.rows(), n = x.cols();
    std::vector<double> g(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < n; ++t) {
                acc += static_cast<double>(x(i, t)) * static_cast<double>(x(j, t));
            }
            g[i * d + j] = acc;
            g[j * d + i] = acc;
        }
    }
    return g;
}

}  // namespace detail

/// Re-dense reconstruction: starting from w_sparse (zeros are free to
/// regrow), minimize
///   mean((W - W_dense) X)^2 + l1 * mean|W| + l2 * mean(W^2)
/// for cfg.epochs optimizer steps and return the resulting dense weights.
/// With use_weight_reg = false only the data term is optimized. The Norm
/// form of the l2 term swaps mean(W^2) for sqrt(mean(W^2)).
inline DenseMatrix redense(const DenseMatrix& w_dense, const DenseMatrix& w_sparse,
                           const DenseMatrix& x, const ReconConfig& cfg) {
    cfg.validate();
    if (!w_dense.same_shape(w_sparse)) {
        throw DimensionError("redense: dense " + w_dense.shape_string() + " vs sparse " +
                             w_sparse.shape_string());
    }
    if (x.rows() != w_dense.cols()) {
        throw DimensionError("redense: activations " + x.shape_string() +
                             " do not match weights " + w_dense.shape_string());
    }
    const std::size_t dout = w_dense.rows(), din = w_dense.cols(), n = x.cols();
    if (n == 0) throw DimensionError("redense: empty calibration");
    const std::size_t numel = dout * din;
    const double data_scale = 1.0 / (static_cast<double>(n) * static_cast<double>(dout));

    const std::vector<double> xxt = detail::gram_f64(x);
    std::vector<double> w(numel), wd(numel), residual(numel), rxxt(numel), grad(numel);
    for (std::size_t i = 0; i < numel; ++i) {
        w[i] = w_sparse.data()[i];
        wd[i] = w_dense.data()[i];
    }

    const bool reg = cfg.use_weight_reg;
    const double l1_per_entry = reg ? cfg.lambda1 / static_cast<double>(numel) : 0.0;
    detail::OptState state(numel);
    for (std::size_t step = 0; step < cfg.epochs; ++step) {
        for (std::size_t i = 0; i < numel; ++i) residual[i] = w[i] - wd[i];
        double loss = data_scale * detail::data_term_and_grad(residual, xxt, dout, din, rxxt);
        for (std::size_t i = 0; i < numel; ++i) grad[i] = 2.0 * data_scale * rxxt[i];
        if (reg && cfg.lambda2 > 0.0) {
            if (cfg.l2_form == L2Form::Squared) {
                double sq = 0.0;
                for (std::size_t i = 0; i < numel; ++i) {
                    grad[i] += 2.0 * cfg.lambda2 / static_cast<double>(numel) * w[i];
                    sq += w[i] * w[i];
                }
                loss += cfg.lambda2 * sq / static_cast<double>(numel);
            } else {
                double sq = 0.0;
                for (std::size_t i = 0; i < numel; ++i) sq += w[i] * w[i];
                const double rms = std::sqrt(sq / static_cast<double>(numel));
                loss += cfg.lambda2 * rms;
                if (rms > 1e-30) {
                    const double f = cfg.lambda2 / (static_cast<double>(numel) * rms);
                    for (std::size_t i = 0; i < numel; ++i) grad[i] += f * w[i];
                }
            }
        }
        if (reg && cfg.lambda1 > 0.0) {
            double abs_sum = 0.0;
            for (std::size_t i = 0; i < numel; ++i) abs_sum += std::fabs(w[i]);
            loss += cfg.lambda1 * abs_sum / static_cast<double>(numel);
        }
        if (!std::isfinite(loss)) {
            throw NumericError("redense: loss diverged at step " + std::to_string(step));
        }
        detail::optimizer_step(w, grad, state, cfg, l1_per_entry, nullptr);
    }

    DenseMatrix out(dout, din);
    for (std::size_t i = 0; i < numel; ++i) out.data()[i] = static_cast<float>(w[i]);
    if (!out.all_finite()) throw NumericError("redense: non-finite weights after optimization");
    return out;
}

/// Soft-mask sparse weight adjustment (second pruning round). Keeps a full
/// dense buffer; every step reselects a pattern-conformant mask from the
/// current |W| (one optimizer step per reselection), evaluates
/// mean((mask . W - W_dense) X)^2, and applies the gradient. Under the
/// default MaskedOnly routing, masked-out entries keep both weight and
/// moment state frozen for the step but stay in the buffer, so they can
/// re-enter when a later reselection flips the mask.
class SoftMaskAdjuster {
public:
    SoftMaskAdjuster(const DenseMatrix& w_dense, const DenseMatrix& w_sparse2,
                     const DenseMatrix& x, SparsityPattern pattern, const ReconConfig& cfg)
        : pattern_(pattern),
          cfg_(cfg),
          dout_(w_dense.rows()),
          din_(w_dense.cols()),
          n_(x.cols()),
          state_(dout_ * din_),
          buffer_(dout_ * din_),
          wd_(dout_ * din_) {
        cfg_.validate();
        if (cfg_.use_weight_reg) {
            throw ConfigError("adjust_soft_mask: weight regularization is not part of the "
                              "adjustment objective; pass use_weight_reg=false");
        }
        if (!w_dense.same_shape(w_sparse2)) {
            throw DimensionError("adjust_soft_mask: dense " + w_dense.shape_string() +
                                 " vs sparse " + w_sparse2.shape_string());
        }
        if (x.rows() != din_) {
            throw DimensionError("adjust_soft_mask: activations " + x.shape_string() +
                                 " do not match weights " + w_dense.shape_string());
        }
        if (n_ == 0) throw DimensionError("adjust_soft_mask: empty calibration");
        xxt_ = detail::gram_f64(x);
        for (std::size_t i = 0; i < buffer_.size(); ++i) {
            buffer_[i] = w_sparse2.data()[i];
            wd_[i] = w_dense.data()[i];
        }
        mask_ = select_current_mask();
    }

    /// One adjustment iteration: reselect mask, masked loss, routed gradient.
    void step() {
        mask_ = select_current_mask();
        const std::size_t numel = buffer_.size();
        std::vector<double> residual(numel), rxxt(numel), grad(numel);
        for (std::size_t i = 0; i < numel; ++i) {
            residual[i] = (mask_.bits[i] ? buffer_[i] : 0.0) - wd_[i];
        }
        const double data_scale = 1.0 / (static_cast<double>(n_) * static_cast<double>(dout_));
        last_loss_ = data_scale * detail::data_term_and_grad(residual, xxt_, dout_, din_, rxxt);
        if (!std::isfinite(last_loss_)) {
            throw NumericError("adjust_soft_mask: loss diverged at step " +
                               std::to_string(state_.t));
        }
        for (std::size_t i = 0; i < numel; ++i) grad[i] = 2.0 * data_scale * rxxt[i];
        const std::uint8_t* route =
            cfg_.routing == MaskGradRouting::MaskedOnly ? mask_.bits.data() : nullptr;
        detail::optimizer_step(buffer_, grad, state_, cfg_, 0.0, route);
    }

    const Mask& mask() const { return mask_; }
    double last_loss() const { return last_loss_; }
    std::size_t steps_done() const { return state_.t; }

    /// mask . buffer, the pattern-conformant weights at this point.
    DenseMatrix masked_weights() const {
        DenseMatrix out(dout_, din_);
        for (std::size_t i = 0; i < buffer_.size(); ++i) {
            out.data()[i] = mask_.bits[i] ? static_cast<float>(buffer_[i]) : 0.0f;
        }
        return out;
    }

private:
    Mask select_current_mask() const {
        DenseMatrix absw(dout_, din_);
        for (std::size_t i = 0; i < buffer_.size(); ++i) {
            absw.data()[i] = static_cast<float>(std::fabs(buffer_[i]));
        }
        return select_mask(absw, pattern_, scope_);
    }

    SparsityPattern pattern_;
    ReconConfig cfg_;
    std::size_t dout_, din_, n_;
    std::vector<double> xxt_;
    detail::OptState state_;
    std::vector<double> buffer_;
    std::vector<double> wd_;
    Mask mask_;
    double last_loss_ = 0.0;
    UnstructuredScope scope_ = UnstructuredScope::LayerGlobal;
};

inline std::pair<DenseMatrix, Mask> adjust_soft_mask(const DenseMatrix& w_dense,
                                                     const DenseMatrix& w_sparse2,
                                                     const DenseMatrix& x,
                                                     const SparsityPattern& pattern,
                                                     const ReconConfig& cfg) {
    SoftMaskAdjuster adj(w_dense, w_sparse2, x, pattern, cfg);
    for (std::size_t i = 0; i < cfg.epochs; ++i) adj.step();
    return {adj.masked_weights(), adj.mask()};
}

/// Skip the adjustment stage when the second one-shot prune already matches
/// or beats the initial prune (ties skip). Both errors are model-level mean
/// squared output deviations from the dense model on the held-in tokens.
inline bool early_exit_check(double err_initial, double err_second_oneshot) {
    return err_second_oneshot <= err_initial;
}

}  // namespace sds

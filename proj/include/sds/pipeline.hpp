#pragma once

#include <array>
#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sds/calibration.hpp"
#include "sds/container.hpp"
#include "sds/model.hpp"
#include "sds/pruning.hpp"
#include "sds/reconstruction.hpp"

namespace sds {

/// Full pipeline configuration. data_mode picks the activations feeding the
/// reconstruction and adjustment stages; the pruning stages always see the
/// forward pass of the model they prune (the first prune sees the dense
/// activations, there is no sparse model yet).
struct SdsConfig {
    PruneMethod method = PruneMethod::SparseGPT;
    SparsityPattern pattern = SparsityPattern::nm(2, 4);
    DataMode data_mode = DataMode::SD;
    ReconConfig recon;
    double damp_fraction = 0.01;
    std::optional<std::array<std::uint64_t, 3>> msd_seed_offsets;  // per-stage redraw
    bool early_exit = true;
    double heldout_fraction = 0.25;
    std::optional<UnstructuredScope> scope;  // unset: per-method default
    std::size_t threads = 1;

    UnstructuredScope effective_scope() const {
        if (scope) return *scope;
        return method == PruneMethod::Wanda ? UnstructuredScope::RowLocal
                                            : UnstructuredScope::LayerGlobal;
    }

    void validate() const {
        recon.validate();
        if (damp_fraction < 0.0) throw ConfigError("sds: damp_fraction must be >= 0");
        if (heldout_fraction < 0.0 || heldout_fraction >= 1.0) {
            throw ConfigError("sds: heldout_fraction must be in [0, 1)");
        }
    }

    nlohmann::json echo() const {
        nlohmann::json j;
        j["method"] = to_string(method);
        j["pattern"] = pattern.to_string();
        j["data_mode"] = to_string(data_mode);
        j["damp_fraction"] = damp_fraction;
        j["early_exit"] = early_exit;
        j["heldout_fraction"] = heldout_fraction;
        j["scope"] =
            effective_scope() == UnstructuredScope::RowLocal ? "row-local" : "layer-global";
        j["threads"] = threads;
        j["recon"] = {{"epochs", recon.epochs},
                      {"lr", recon.lr},
                      {"lambda1", recon.lambda1},
                      {"lambda2", recon.lambda2},
                      {"use_weight_reg", recon.use_weight_reg},
                      {"optimizer", recon.optimizer == Optimizer::GradientDescent
                                        ? "gradient-descent"
                                        : "adaptive-moments"},
                      {"l2_form", recon.l2_form == L2Form::Squared ? "squared" : "norm"},
                      {"routing", recon.routing == MaskGradRouting::MaskedOnly
                                      ? "masked"
                                      : "all"}};
        if (msd_seed_offsets) {
            j["msd_seed_offsets"] = {(*msd_seed_offsets)[0], (*msd_seed_offsets)[1],
                                     (*msd_seed_offsets)[2]};
        } else {
            j["msd_seed_offsets"] = nullptr;
        }
        return j;
    }
};

struct LayerRecord {
    std::size_t layer_idx = 0;
    double mse_heldin = 0.0;
    double mse_heldout = 0.0;
    double nnz_fraction = 0.0;
};

struct StageRecord {
    std::string stage;  // initial | redense | second_oneshot | final
    double mse_heldin = 0.0;
    double mse_heldout = 0.0;
    double nnz_fraction = 0.0;
    std::vector<LayerRecord> layers;
};

struct PruneReport {
    nlohmann::json config_echo;
    std::uint64_t seed = 0;
    bool early_exit_taken = false;
    std::vector<StageRecord> stages;
    std::map<std::string, double> wall_times_ms;

    const StageRecord& stage(const std::string& name) const {
        for (const auto& s : stages)
            if (s.stage == name) return s;
        throw ConfigError("report has no stage '" + name + "'");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["config"] = config_echo;
        j["seed"] = seed;
        j["early_exit_taken"] = early_exit_taken;
        j["stages"] = nlohmann::json::array();
        for (const auto& s : stages) {
            nlohmann::json js;
            js["stage"] = s.stage;
            js["mse_heldin"] = s.mse_heldin;
            js["mse_heldout"] = s.mse_heldout;
            js["nnz_fraction"] = s.nnz_fraction;
            js["layers"] = nlohmann::json::array();
            for (const auto& l : s.layers) {
                js["layers"].push_back({{"layer", l.layer_idx},
                                        {"mse_heldin", l.mse_heldin},
                                        {"mse_heldout", l.mse_heldout},
                                        {"nnz_fraction", l.nnz_fraction}});
            }
            j["stages"].push_back(js);
        }
        j["wall_times_ms"] = wall_times_ms;
        return j;
    }
};

namespace detail {

inline std::vector<DenseMatrix> layer_outputs(const LayerStack& m, const DenseMatrix& x,
                                              std::size_t threads) {
    std::vector<DenseMatrix> outs;
    outs.reserve(m.layers.size());
    DenseMatrix cur = x;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        cur = layer_forward(m.layers[l], cur, l, threads);
        outs.push_back(cur);
    }
    return outs;
}

inline double value_nnz_fraction(const DenseMatrix& w) {
    std::size_t nz = 0;
    for (float v : w.values()) nz += (v != 0.0f) ? 1 : 0;
    return w.numel() == 0 ? 0.0 : static_cast<double>(nz) / static_cast<double>(w.numel());
}

class StopwatchMs {
public:
    StopwatchMs() : t0_(std::chrono::steady_clock::now()) {}
    double lap() {
        const auto t1 = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0_).count();
        t0_ = t1;
        return ms;
    }

private:
    std::chrono::steady_clock::time_point t0_;
};

/// Collects per-layer failures from parallel stage loops and rethrows the
/// first one with stage and layer attached, keeping its error class.
class LayerErrors {
public:
    explicit LayerErrors(std::size_t n) : kinds_(n, Kind::None), messages_(n) {}

    template <typename Fn>
    void guard(std::size_t layer, Fn&& fn) {
        try {
            fn();
        } catch (const NumericError& e) {
            kinds_[layer] = Kind::Numeric;
            messages_[layer] = e.what();
        } catch (const ConfigError& e) {
            kinds_[layer] = Kind::Config;
            messages_[layer] = e.what();
        } catch (const Error& e) {
            kinds_[layer] = Kind::Dimension;
            messages_[layer] = e.what();
        }
    }

    void rethrow(const std::string& stage) const {
        for (std::size_t l = 0; l < kinds_.size(); ++l) {
            if (kinds_[l] == Kind::None) continue;
            const std::string msg =
                "stage " + stage + ", layer " + std::to_string(l) + ": " + messages_[l];
            switch (kinds_[l]) {
                case Kind::Numeric: throw NumericError(msg);
                case Kind::Config: throw ConfigError(msg);
                default: throw DimensionError(msg);
            }
        }
    }

private:
    enum class Kind { None, Numeric, Config, Dimension };
    std::vector<Kind> kinds_;
    std::vector<std::string> messages_;
};

}  // namespace detail

/// Histogram of weight values over [lo, hi); out-of-range values clamp into
/// the end bins. exclude_zeros drops exact zeros before counting, the usual
/// view for sparse weight distributions.
inline std::vector<std::uint64_t> weight_histogram(const DenseMatrix& w, std::size_t bins,
                                                   double lo, double hi, bool exclude_zeros) {
    if (bins < 1) throw ConfigError("weight_histogram: bins must be >= 1");
    if (!(lo < hi)) throw ConfigError("weight_histogram: need lo < hi");
    std::vector<std::uint64_t> counts(bins, 0);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (float v : w.values()) {
        if (exclude_zeros && v == 0.0f) continue;
        double pos = (static_cast<double>(v) - lo) / width;
        std::size_t b;
        if (pos < 0.0) {
            b = 0;
        } else {
            b = static_cast<std::size_t>(pos);
            if (b >= bins) b = bins - 1;
        }
        counts[b] += 1;
    }
    return counts;
}

inline std::string histogram_csv(const std::vector<std::uint64_t>& counts, double lo,
                                 double hi) {
    const double width = (hi - lo) / static_cast<double>(counts.size());
    std::string out = "bin_lo,bin_hi,count\n";
    char buf[96];
    for (std::size_t b = 0; b < counts.size(); ++b) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%llu\n", lo + width * static_cast<double>(b),
                      lo + width * static_cast<double>(b + 1),
                      static_cast<unsigned long long>(counts[b]));
        out += buf;
    }
    return out;
}

/// Deterministic held-in / held-out split of calibration columns: the column
/// permutation is drawn from the calibration seed, the first
/// floor(fraction * n) columns go to the held-out side.
struct CalibrationSplit {
    DenseMatrix heldin;
    DenseMatrix heldout;
};

inline CalibrationSplit split_calibration(const CalibrationSet& calib, double heldout_fraction) {
    const std::size_t n = calib.n_tokens();
    Rng rng(calib.seed);
    const std::vector<std::size_t> perm = rng.permutation(n);
    const std::size_t n_out =
        static_cast<std::size_t>(std::floor(heldout_fraction * static_cast<double>(n)));
    CalibrationSplit split;
    split.heldout = DenseMatrix(calib.in_dim(), n_out);
    split.heldin = DenseMatrix(calib.in_dim(), n - n_out);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t src = perm[t];
        for (std::size_t i = 0; i < calib.in_dim(); ++i) {
            if (t < n_out) {
                split.heldout(i, t) = calib.x0(i, src);
            } else {
                split.heldin(i, t - n_out) = calib.x0(i, src);
            }
        }
    }
    return split;
}

namespace detail {

struct StageContext {
    const LayerStack* dense;
    const SdsConfig* cfg;
    const DenseMatrix* heldin;
    const DenseMatrix* heldout;
    std::vector<DenseMatrix> dense_outs_in;
    std::vector<DenseMatrix> dense_outs_out;
};

inline StageRecord record_stage(const StageContext& ctx, const std::string& name,
                                const LayerStack& model, const std::vector<Mask>* masks) {
    StageRecord rec;
    rec.stage = name;
    const std::size_t threads = ctx.cfg->threads;
    const auto outs_in = layer_outputs(model, *ctx.heldin, threads);
    const auto outs_out = layer_outputs(model, *ctx.heldout, threads);
    std::size_t kept_total = 0, numel_total = 0;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        LayerRecord lr;
        lr.layer_idx = l;
        lr.mse_heldin = mean_squared_error(outs_in[l], ctx.dense_outs_in[l]);
        lr.mse_heldout = mean_squared_error(outs_out[l], ctx.dense_outs_out[l]);
        if (masks) {
            lr.nnz_fraction = (*masks)[l].density();
            kept_total += (*masks)[l].kept_count();
        } else {
            lr.nnz_fraction = value_nnz_fraction(model.layers[l].weight);
            for (float v : model.layers[l].weight.values()) kept_total += (v != 0.0f) ? 1 : 0;
        }
        numel_total += model.layers[l].weight.numel();
        rec.layers.push_back(lr);
    }
    rec.mse_heldin = rec.layers.empty() ? 0.0 : rec.layers.back().mse_heldin;
    rec.mse_heldout = rec.layers.empty() ? 0.0 : rec.layers.back().mse_heldout;
    rec.nnz_fraction =
        numel_total == 0 ? 0.0 : static_cast<double>(kept_total) / static_cast<double>(numel_total);
    return rec;
}

/// One-shot prune of every layer of `model`, activations from `x0` through
/// `model` itself. Layer errors are rethrown with stage and layer attached.
inline std::pair<LayerStack, std::vector<Mask>> prune_all_layers(const LayerStack& model,
                                                                 const DenseMatrix& x0,
                                                                 const SdsConfig& cfg,
                                                                 const std::string& stage) {
    const ActivationTrace trace = collect_inputs(model, model, x0, DataMode::SD, cfg.threads);
    LayerStack out = model;
    std::vector<Mask> masks(model.layers.size());
    LayerErrors errors(model.layers.size());
    parallel_for(model.layers.size(), cfg.threads, [&](std::size_t l) {
        errors.guard(l, [&] {
            const DenseMatrix& w = model.layers[l].weight;
            const DenseMatrix& xl = trace.per_layer_inputs[l];
            PruneResult r;
            switch (cfg.method) {
                case PruneMethod::SparseGPT: {
                    const HessianState h = accumulate_hessian(xl, cfg.damp_fraction);
                    r = prune_sparsegpt(w, h.inverse(), cfg.pattern, cfg.effective_scope());
                    break;
                }
                case PruneMethod::Wanda:
                    r = prune_wanda(w, xl, cfg.pattern, cfg.effective_scope());
                    break;
                case PruneMethod::Magnitude:
                    r = prune_magnitude(w, cfg.pattern, cfg.effective_scope());
                    break;
            }
            out.layers[l].weight = std::move(r.weights);
            masks[l] = std::move(r.mask);
        });
    });
    errors.rethrow(stage);
    return {std::move(out), std::move(masks)};
}

/// Re-dense every layer of `start` against the dense model's weights, with
/// inputs per the data mode (DD: dense trace, SD: start's trace collected
/// once, KD: re-forward through each freshly updated layer).
inline LayerStack redense_all_layers(const LayerStack& dense, const LayerStack& start,
                                     const DenseMatrix& x0, DataMode mode,
                                     const ReconConfig& recon, std::size_t threads = 1) {
    LayerStack out = start;
    if (mode == DataMode::KD) {
        DenseMatrix cur = x0;
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            out.layers[l].weight =
                redense(dense.layers[l].weight, start.layers[l].weight, cur, recon);
            cur = layer_forward(out.layers[l], cur, l, threads);
        }
        return out;
    }
    const ActivationTrace trace = collect_inputs(dense, start, x0, mode, threads);
    LayerErrors errors(out.layers.size());
    parallel_for(out.layers.size(), threads, [&](std::size_t l) {
        errors.guard(l, [&] {
            out.layers[l].weight = redense(dense.layers[l].weight, start.layers[l].weight,
                                           trace.per_layer_inputs[l], recon);
        });
    });
    errors.rethrow("redense");
    return out;
}

/// Soft-mask adjust every layer of `start` against the dense weights.
inline std::pair<LayerStack, std::vector<Mask>> adjust_all_layers(
    const LayerStack& dense, const LayerStack& start, const DenseMatrix& x0, DataMode mode,
    const SparsityPattern& pattern, const ReconConfig& recon, std::size_t threads = 1) {
    ReconConfig cfg = recon;
    cfg.use_weight_reg = false;
    LayerStack out = start;
    std::vector<Mask> masks(out.layers.size());
    if (mode == DataMode::KD) {
        DenseMatrix cur = x0;
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            auto [w, mask] = adjust_soft_mask(dense.layers[l].weight, start.layers[l].weight,
                                              cur, pattern, cfg);
            out.layers[l].weight = std::move(w);
            masks[l] = std::move(mask);
            cur = layer_forward(out.layers[l], cur, l, threads);
        }
        return {std::move(out), std::move(masks)};
    }
    const ActivationTrace trace = collect_inputs(dense, start, x0, mode, threads);
    LayerErrors errors(out.layers.size());
    parallel_for(out.layers.size(), threads, [&](std::size_t l) {
        errors.guard(l, [&] {
            auto [w, mask] = adjust_soft_mask(dense.layers[l].weight, start.layers[l].weight,
                                              trace.per_layer_inputs[l], pattern, cfg);
            out.layers[l].weight = std::move(w);
            masks[l] = std::move(mask);
        });
    });
    errors.rethrow("adjust");
    return {std::move(out), std::move(masks)};
}

}  // namespace detail

/// The three-step pipeline: one-shot prune, re-dense reconstruction against
/// the original dense weights, second one-shot prune, then soft-mask
/// adjustment unless the early exit fires. The input model is never mutated;
/// biases ride along untouched. Reported errors are deviations from the
/// dense model's outputs on the held-in / held-out column split.
inline std::pair<LayerStack, PruneReport> run_sds(const LayerStack& model,
                                                  const CalibrationSet& calib,
                                                  const SdsConfig& cfg) {
    cfg.validate();
    model.validate();
    if (model.layers.empty()) throw ConfigError("run_sds: model has no layers");
    if (calib.in_dim() != model.in_dim()) {
        throw DimensionError("run_sds: calibration rows " + std::to_string(calib.in_dim()) +
                             " do not match model input " + std::to_string(model.in_dim()));
    }
    if (cfg.pattern.is_nm()) {
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            if (model.layers[l].in_dim() % cfg.pattern.m_group != 0) {
                throw DimensionError("layer " + std::to_string(l) + ": in_dim " +
                                     std::to_string(model.layers[l].in_dim()) +
                                     " not divisible by group size " +
                                     std::to_string(cfg.pattern.m_group) + " of pattern " +
                                     cfg.pattern.to_string());
            }
        }
    }
    if (cfg.msd_seed_offsets && !calib.correlation) {
        throw ConfigError("run_sds: --msd needs generated calibration (correlation unknown "
                          "for file-loaded tokens)");
    }

    CalibrationSplit split = split_calibration(calib, cfg.heldout_fraction);
    if (split.heldin.cols() == 0) throw ConfigError("run_sds: no held-in tokens after split");
    if (cfg.method == PruneMethod::SparseGPT) {
        // full-rank calibration keeps X X^T nonsingular for the Hessian solves
        std::size_t max_in = 0;
        for (const auto& l : model.layers) max_in = std::max(max_in, l.in_dim());
        if (split.heldin.cols() < max_in) {
            throw ConfigError("run_sds: SparseGPT needs at least " + std::to_string(max_in) +
                              " held-in tokens for full-rank calibration, have " +
                              std::to_string(split.heldin.cols()));
        }
    }

    // Per-stage held-in inputs; MSD redraws them with offset seeds while the
    // held-out columns stay fixed so stage records remain comparable.
    auto stage_heldin = [&](std::size_t stage_idx) -> DenseMatrix {
        if (!cfg.msd_seed_offsets) return split.heldin;
        const CalibrationSet redrawn =
            make_calibration(calib.seed + (*cfg.msd_seed_offsets)[stage_idx], calib.in_dim(),
                             split.heldin.cols(), *calib.correlation);
        return redrawn.x0;
    };

    detail::StageContext ctx;
    ctx.dense = &model;
    ctx.cfg = &cfg;
    ctx.heldin = &split.heldin;
    ctx.heldout = &split.heldout;
    ctx.dense_outs_in = detail::layer_outputs(model, split.heldin, cfg.threads);
    ctx.dense_outs_out = detail::layer_outputs(model, split.heldout, cfg.threads);

    PruneReport report;
    report.config_echo = cfg.echo();
    report.seed = calib.seed;
    detail::StopwatchMs clock;

    // ---- step 1: initial one-shot prune, dense activations ----
    auto [m1, masks1] = detail::prune_all_layers(model, stage_heldin(0), cfg, "initial");
    report.stages.push_back(detail::record_stage(ctx, "initial", m1, &masks1));
    report.wall_times_ms["initial"] = clock.lap();

    // ---- step 2: re-dense reconstruction against the dense weights ----
    LayerStack m2 = detail::redense_all_layers(model, m1, stage_heldin(1), cfg.data_mode,
                                               cfg.recon, cfg.threads);
    report.stages.push_back(detail::record_stage(ctx, "redense", m2, nullptr));
    report.wall_times_ms["redense"] = clock.lap();

    // ---- step 3: second one-shot prune, then adjust unless exiting early ----
    auto [m3, masks3] = detail::prune_all_layers(m2, stage_heldin(2), cfg, "second_oneshot");
    report.stages.push_back(detail::record_stage(ctx, "second_oneshot", m3, &masks3));
    report.wall_times_ms["second_oneshot"] = clock.lap();

    const double err_initial = report.stage("initial").mse_heldin;
    const double err_second = report.stage("second_oneshot").mse_heldin;
    LayerStack final_model = m3;
    std::vector<Mask> final_masks = masks3;
    report.early_exit_taken = cfg.early_exit && early_exit_check(err_initial, err_second);
    if (!report.early_exit_taken) {
        auto adjusted = detail::adjust_all_layers(model, m3, stage_heldin(2), cfg.data_mode,
                                                  cfg.pattern, cfg.recon, cfg.threads);
        final_model = std::move(adjusted.first);
        final_masks = std::move(adjusted.second);
    }
    report.stages.push_back(detail::record_stage(ctx, "final", final_model, &final_masks));
    report.wall_times_ms["final"] = clock.lap();

    double total = 0.0;
    for (const auto& [k, v] : report.wall_times_ms) total += v;
    report.wall_times_ms["total"] = total;
    return {std::move(final_model), std::move(report)};
}

}  // namespace sds

// Command-line front end for the SDS pruning pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
// failure. Diagnostics go to stderr; artifacts are written atomically.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sds/sds.hpp"

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// shared option plumbing
// ---------------------------------------------------------------------------

struct CommonIo {
    std::uint64_t seed = 0;
    double heldout_fraction = 0.25;
    std::size_t threads = 1;
    bool verbose = false;
};

void add_common(CLI::App* cmd, CommonIo& io) {
    cmd->add_option("--seed", io.seed, "Seed for splits and synthetic draws")
        ->capture_default_str();
    cmd->add_option("--heldout-fraction", io.heldout_fraction,
                    "Fraction of calibration columns reserved for held-out evaluation")
        ->capture_default_str();
    cmd->add_option("--threads", io.threads, "Worker threads for per-layer work")
        ->envname("SDS_THREADS")
        ->capture_default_str();
    cmd->add_flag("--verbose", io.verbose, "Log one line per layer per stage to stderr");
}

struct ReconFlags {
    std::size_t epochs = 200;
    double lr = 0.1;
    double lambda1 = 0.1;
    double lambda2 = 0.1;
    bool no_weight_reg = false;
    std::string l2_form = "squared";
    std::string optimizer = "adam";
    std::string routing = "masked";
};

void add_recon(CLI::App* cmd, ReconFlags& rf, bool with_lambdas = true) {
    cmd->add_option("--epochs", rf.epochs, "Optimizer steps per layer")->capture_default_str();
    cmd->add_option("--lr", rf.lr, "Learning rate")->capture_default_str();
    if (with_lambdas) {
        cmd->add_option("--lambda1", rf.lambda1, "L1 regularization weight")
            ->capture_default_str();
        cmd->add_option("--lambda2", rf.lambda2, "L2 regularization weight")
            ->capture_default_str();
        cmd->add_flag("--no-weight-reg", rf.no_weight_reg,
                      "Drop the L1/L2 terms from the reconstruction objective");
        cmd->add_option("--l2-form", rf.l2_form, "L2 term form: squared mean or plain norm")
            ->check(CLI::IsMember({"squared", "norm"}))
            ->capture_default_str();
    }
    cmd->add_option("--optimizer", rf.optimizer, "Layer optimizer")
        ->check(CLI::IsMember({"adam", "gd"}))
        ->capture_default_str();
    cmd->add_option("--routing", rf.routing,
                    "Soft-mask gradient routing: masked entries only, or all buffer entries")
        ->check(CLI::IsMember({"masked", "all"}))
        ->capture_default_str();
}

sds::ReconConfig make_recon(const ReconFlags& rf) {
    sds::ReconConfig cfg;
    cfg.epochs = rf.epochs;
    cfg.lr = rf.lr;
    cfg.lambda1 = rf.lambda1;
    cfg.lambda2 = rf.lambda2;
    cfg.use_weight_reg = !rf.no_weight_reg;
    cfg.optimizer =
        rf.optimizer == "gd" ? sds::Optimizer::GradientDescent : sds::Optimizer::AdaptiveMoments;
    cfg.l2_form = rf.l2_form == "norm" ? sds::L2Form::Norm : sds::L2Form::Squared;
    cfg.routing = rf.routing == "all" ? sds::MaskGradRouting::AllEntries
                                      : sds::MaskGradRouting::MaskedOnly;
    return cfg;
}

sds::PruneMethod parse_method(const std::string& s) {
    if (s == "sparsegpt") return sds::PruneMethod::SparseGPT;
    if (s == "wanda") return sds::PruneMethod::Wanda;
    return sds::PruneMethod::Magnitude;
}

std::optional<sds::UnstructuredScope> parse_scope(const std::string& s) {
    if (s == "global") return sds::UnstructuredScope::LayerGlobal;
    if (s == "row") return sds::UnstructuredScope::RowLocal;
    return std::nullopt;  // "auto": per-method default
}

sds::DataMode parse_mode(const std::string& s) {
    if (s == "dd") return sds::DataMode::DD;
    if (s == "kd") return sds::DataMode::KD;
    return sds::DataMode::SD;
}

sds::CalibrationSet load_calibration(const std::string& path, std::uint64_t seed) {
    const auto c = sds::read_container(path);
    sds::CalibrationSet calib;
    calib.x0 = c.get_matrix("calib.x0");
    calib.seed = seed;
    if (c.has("calib.correlation")) {
        calib.correlation = c.get("calib.correlation").data.at(0);
    }
    return calib;
}

void write_json_atomic(const std::string& path, const json& j) {
    sds::write_file_atomic(path, j.dump(2) + "\n");
}

std::string default_manifest_path(const std::string& container_path) {
    return container_path + ".manifest.json";
}

/// Per-layer and model-level deviation of `model` from `reference` on the
/// held-in / held-out split; the report payload of eval/prune/redense/adjust.
json evaluate_vs_reference(const sds::LayerStack& reference, const sds::LayerStack& model,
                           const sds::CalibrationSet& calib, const CommonIo& io) {
    auto split = sds::split_calibration(calib, io.heldout_fraction);
    auto ref_in = sds::detail::layer_outputs(reference, split.heldin, io.threads);
    auto ref_out = sds::detail::layer_outputs(reference, split.heldout, io.threads);
    auto got_in = sds::detail::layer_outputs(model, split.heldin, io.threads);
    auto got_out = sds::detail::layer_outputs(model, split.heldout, io.threads);
    json layers = json::array();
    std::size_t kept = 0, numel = 0;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        std::size_t nz = 0;
        for (float v : model.layers[l].weight.values()) nz += v != 0.0f ? 1 : 0;
        kept += nz;
        numel += model.layers[l].weight.numel();
        layers.push_back(
            {{"layer", l},
             {"mse_heldin", sds::mean_squared_error(got_in[l], ref_in[l])},
             {"mse_heldout", sds::mean_squared_error(got_out[l], ref_out[l])},
             {"nnz_fraction",
              static_cast<double>(nz) / static_cast<double>(model.layers[l].weight.numel())}});
    }
    json j;
    j["mse_heldin"] = layers.empty() ? 0.0 : layers.back()["mse_heldin"].get<double>();
    j["mse_heldout"] = layers.empty() ? 0.0 : layers.back()["mse_heldout"].get<double>();
    j["nnz_fraction"] = numel ? static_cast<double>(kept) / static_cast<double>(numel) : 0.0;
    j["heldin_tokens"] = split.heldin.cols();
    j["heldout_tokens"] = split.heldout.cols();
    j["layers"] = layers;
    return j;
}

void log_stage(const CommonIo& io, const std::string& stage, const json& layers) {
    if (!io.verbose) return;
    for (const auto& l : layers) {
        std::cerr << "[sds] stage " << stage << " layer " << l["layer"] << " mse_heldin "
                  << l["mse_heldin"] << " nnz " << l["nnz_fraction"] << "\n";
    }
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

struct GenModelArgs {
    std::string out, manifest, dims, activation = "relu", name = "model";
    double weight_std = 0.0;  // 0: 1/sqrt(fan_in)
    bool bias = false;
    std::uint64_t seed = 0;
};

int run_gen_model(const GenModelArgs& a) {
    std::vector<std::size_t> dims;
    {
        std::string tok;
        std::stringstream ss(a.dims);
        while (std::getline(ss, tok, ',')) {
            long v = 0;
            try {
                v = std::stol(tok);
            } catch (const std::exception&) {
                throw sds::ConfigError("gen-model: bad dims entry '" + tok + "'");
            }
            if (v <= 0) throw sds::ConfigError("gen-model: dims must be positive");
            dims.push_back(static_cast<std::size_t>(v));
        }
    }
    if (dims.size() < 2) throw sds::ConfigError("gen-model: need at least two dims");
    sds::Rng rng(a.seed);
    sds::LayerStack model;
    model.name = a.name;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        sds::LinearLayer layer;
        const float std_l = a.weight_std > 0.0
                                ? static_cast<float>(a.weight_std)
                                : 1.0f / std::sqrt(static_cast<float>(dims[l]));
        layer.weight = sds::gaussian(rng, dims[l + 1], dims[l], 0.0f, std_l);
        if (a.bias) {
            layer.bias = sds::gaussian(rng, dims[l + 1], 1, 0.0f, std_l).values();
        }
        // hidden layers take the requested activation, the output layer is linear
        layer.activation = (l + 2 < dims.size() && a.activation == "relu")
                               ? sds::Activation::ReLU
                               : sds::Activation::None;
        model.layers.push_back(std::move(layer));
    }
    sds::save_model(model, a.out,
                    a.manifest.empty() ? default_manifest_path(a.out) : a.manifest);
    return 0;
}

struct GenCalibArgs {
    std::string out;
    std::size_t dim = 0, tokens = 0;
    double correlation = 0.5;
    std::uint64_t seed = 0;
};

int run_gen_calib(const GenCalibArgs& a) {
    auto calib =
        sds::make_calibration(a.seed, a.dim, a.tokens, static_cast<float>(a.correlation));
    sds::TensorContainer c;
    c.add_matrix("calib.x0", calib.x0);
    c.add_vector("calib.correlation", {static_cast<float>(a.correlation)});
    sds::write_container(a.out, c);
    return 0;
}

struct ModelRef {
    std::string container, manifest;

    sds::LayerStack load() const {
        return sds::load_model(manifest.empty() ? default_manifest_path(container) : manifest,
                               container);
    }
};

void add_model_ref(CLI::App* cmd, ModelRef& ref, const std::string& prefix,
                   const std::string& what) {
    cmd->add_option("--" + prefix + "model", ref.container, what + " weights (SDST)")
        ->required();
    cmd->add_option("--" + prefix + "manifest", ref.manifest,
                    what + " manifest JSON (default: <model>.manifest.json)");
}

void save_stage_snapshot(const std::string& dir, const std::string& stage,
                         const sds::LayerStack& model) {
    std::filesystem::create_directories(dir);
    const std::string base = dir + "/" + stage;
    sds::save_model(model, base + ".sdst", base + ".sdst.manifest.json");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Sparse-dense-sparse pruning for stacks of fully connected layers: one-shot\n"
        "pruning (sparsegpt/wanda/magnitude), regularized re-dense reconstruction,\n"
        "and a second pruning round with soft-mask weight adjustment.",
        "sds"};
    app.require_subcommand(1);

    // ---- gen-model ----
    GenModelArgs gm;
    auto* c_gm = app.add_subcommand("gen-model", "Generate a random teacher layer stack");
    c_gm->add_option("--out", gm.out, "Output weights (SDST)")->required();
    c_gm->add_option("--manifest", gm.manifest,
                     "Output manifest JSON (default: <out>.manifest.json)");
    c_gm->add_option("--dims", gm.dims, "Comma-separated layer widths, e.g. 32,64,64,32")
        ->required();
    c_gm->add_option("--activation", gm.activation,
                     "Hidden-layer activation; the output layer stays linear")
        ->check(CLI::IsMember({"relu", "none"}))
        ->capture_default_str();
    c_gm->add_option("--weight-std", gm.weight_std,
                     "Weight standard deviation (0 picks 1/sqrt(fan_in))")
        ->capture_default_str();
    c_gm->add_flag("--bias", gm.bias, "Draw random biases as well");
    c_gm->add_option("--name", gm.name, "Model name")->capture_default_str();
    c_gm->add_option("--seed", gm.seed, "Generator seed")->capture_default_str();

    // ---- gen-calib ----
    GenCalibArgs gc;
    auto* c_gc = app.add_subcommand("gen-calib", "Generate correlated calibration tokens");
    c_gc->add_option("--out", gc.out, "Output container (SDST, tensor calib.x0)")->required();
    c_gc->add_option("--dim", gc.dim, "Feature dimension")->required();
    c_gc->add_option("--tokens", gc.tokens, "Token count")->required();
    c_gc->add_option("--correlation", gc.correlation, "Cross-feature correlation in [0,1]")
        ->capture_default_str();
    c_gc->add_option("--seed", gc.seed, "Generator seed")->capture_default_str();

    // ---- prune ----
    struct {
        ModelRef model;
        std::string calib, method = "sparsegpt", pattern, scope = "auto";
        double damp = 0.01;
        std::string out, out_manifest, report;
        CommonIo io;
    } pr;
    auto* c_pr = app.add_subcommand("prune", "One-shot prune every layer");
    add_model_ref(c_pr, pr.model, "", "Input model");
    c_pr->add_option("--calib", pr.calib, "Calibration container")->required();
    c_pr->add_option("--method", pr.method, "Pruning method")
        ->check(CLI::IsMember({"sparsegpt", "wanda", "magnitude"}))
        ->capture_default_str();
    c_pr->add_option("--pattern", pr.pattern,
                     "Sparsity pattern: ratio like 0.5 or N:M like 2:4")
        ->required();
    c_pr->add_option("--scope", pr.scope,
                     "Unstructured ranking scope (auto: row-local for wanda, layer-global "
                     "otherwise)")
        ->check(CLI::IsMember({"auto", "global", "row"}))
        ->capture_default_str();
    c_pr->add_option("--damp", pr.damp, "Hessian dampening fraction")->capture_default_str();
    c_pr->add_option("--out", pr.out, "Output weights (SDST)")->required();
    c_pr->add_option("--out-manifest", pr.out_manifest,
                     "Output manifest JSON (default: <out>.manifest.json)");
    c_pr->add_option("--report", pr.report, "Optional evaluation report JSON");
    add_common(c_pr, pr.io);

    // ---- redense ----
    struct {
        ModelRef dense, sparse;
        std::string calib, data_mode = "sd";
        ReconFlags recon;
        std::string out, out_manifest, report;
        CommonIo io;
    } rd;
    auto* c_rd = app.add_subcommand(
        "redense", "Re-dense reconstruction of a sparse model against the dense weights");
    add_model_ref(c_rd, rd.dense, "dense-", "Dense reference");
    add_model_ref(c_rd, rd.sparse, "sparse-", "Sparse starting point");
    c_rd->add_option("--calib", rd.calib, "Calibration container")->required();
    c_rd->add_option("--data-mode", rd.data_mode, "Activation source for layer inputs")
        ->check(CLI::IsMember({"dd", "sd", "kd"}))
        ->capture_default_str();
    add_recon(c_rd, rd.recon);
    c_rd->add_option("--out", rd.out, "Output weights (SDST)")->required();
    c_rd->add_option("--out-manifest", rd.out_manifest,
                     "Output manifest JSON (default: <out>.manifest.json)");
    c_rd->add_option("--report", rd.report, "Optional evaluation report JSON");
    add_common(c_rd, rd.io);

    // ---- adjust ----
    struct {
        ModelRef dense, sparse;
        std::string calib, pattern, data_mode = "sd";
        ReconFlags recon;
        std::string out, out_manifest, report;
        CommonIo io;
    } ad;
    auto* c_ad = app.add_subcommand(
        "adjust", "Soft-mask weight adjustment of a pruned model against the dense weights");
    add_model_ref(c_ad, ad.dense, "dense-", "Dense reference");
    add_model_ref(c_ad, ad.sparse, "", "Pruned model");
    c_ad->add_option("--calib", ad.calib, "Calibration container")->required();
    c_ad->add_option("--pattern", ad.pattern, "Sparsity pattern")->required();
    c_ad->add_option("--data-mode", ad.data_mode, "Activation source for layer inputs")
        ->check(CLI::IsMember({"dd", "sd", "kd"}))
        ->capture_default_str();
    add_recon(c_ad, ad.recon, /*with_lambdas=*/false);
    c_ad->add_option("--out", ad.out, "Output weights (SDST)")->required();
    c_ad->add_option("--out-manifest", ad.out_manifest,
                     "Output manifest JSON (default: <out>.manifest.json)");
    c_ad->add_option("--report", ad.report, "Optional evaluation report JSON");
    add_common(c_ad, ad.io);

    // ---- run-sds ----
    struct {
        ModelRef model;
        std::string calib, method = "sparsegpt", pattern, data_mode = "sd", scope = "auto";
        ReconFlags recon;
        double damp = 0.01;
        bool msd = false, no_early_exit = false;
        std::string out, out_manifest, report, save_stages;
        CommonIo io;
    } rs;
    auto* c_rs = app.add_subcommand("run-sds", "Full sparse-dense-sparse pipeline");
    add_model_ref(c_rs, rs.model, "", "Input dense model");
    c_rs->add_option("--calib", rs.calib, "Calibration container")->required();
    c_rs->add_option("--method", rs.method, "Pruning method")
        ->check(CLI::IsMember({"sparsegpt", "wanda", "magnitude"}))
        ->capture_default_str();
    c_rs->add_option("--pattern", rs.pattern,
                     "Sparsity pattern: ratio like 0.5 or N:M like 2:4")
        ->required();
    c_rs->add_option("--data-mode", rs.data_mode,
                     "Activation source for reconstruction and adjustment")
        ->check(CLI::IsMember({"dd", "sd", "kd"}))
        ->capture_default_str();
    c_rs->add_option("--scope", rs.scope,
                     "Unstructured ranking scope (auto: row-local for wanda, layer-global "
                     "otherwise)")
        ->check(CLI::IsMember({"auto", "global", "row"}))
        ->capture_default_str();
    add_recon(c_rs, rs.recon);
    c_rs->add_option("--damp", rs.damp, "Hessian dampening fraction")->capture_default_str();
    c_rs->add_flag("--msd", rs.msd, "Redraw calibration per stage with offset seeds");
    c_rs->add_flag("--no-early-exit", rs.no_early_exit,
                   "Always run the soft-mask adjustment stage");
    c_rs->add_option("--out", rs.out, "Final pruned weights (SDST)")->required();
    c_rs->add_option("--out-manifest", rs.out_manifest,
                     "Output manifest JSON (default: <out>.manifest.json)");
    c_rs->add_option("--report", rs.report, "Pipeline report JSON");
    c_rs->add_option("--save-stages", rs.save_stages,
                     "Directory for per-stage snapshots (initial/redense/second/final)");
    add_common(c_rs, rs.io);

    // ---- eval ----
    struct {
        ModelRef dense, model;
        std::string calib, out;
        CommonIo io;
    } ev;
    auto* c_ev = app.add_subcommand(
        "eval", "Output deviation of a model from a dense reference on the calibration split");
    add_model_ref(c_ev, ev.dense, "dense-", "Dense reference");
    add_model_ref(c_ev, ev.model, "", "Model under evaluation");
    c_ev->add_option("--calib", ev.calib, "Calibration container")->required();
    c_ev->add_option("--out", ev.out, "Report JSON path (default: stdout)");
    add_common(c_ev, ev.io);

    // ---- hist ----
    struct {
        ModelRef model;
        int layer = -1;
        std::size_t bins = 64;
        double lo = -1.0, hi = 1.0;
        bool exclude_zeros = false;
        std::string out;
    } hg;
    auto* c_hg = app.add_subcommand("hist", "Weight-distribution histogram as CSV");
    add_model_ref(c_hg, hg.model, "", "Input model");
    c_hg->add_option("--layer", hg.layer, "Layer index (-1: all layers pooled)")
        ->capture_default_str();
    c_hg->add_option("--bins", hg.bins, "Bin count")->capture_default_str();
    c_hg->add_option("--lo", hg.lo, "Histogram range lower edge")->capture_default_str();
    c_hg->add_option("--hi", hg.hi, "Histogram range upper edge")->capture_default_str();
    c_hg->add_flag("--exclude-zeros", hg.exclude_zeros,
                   "Drop exact zeros before counting (sparse-weight view)");
    c_hg->add_option("--out", hg.out, "Output CSV path")->required();

    // ---- bench-spmm ----
    struct {
        std::size_t rows = 1024, cols = 1024, tokens = 128, repeats = 9;
        std::string pattern = "0.9";
        std::uint64_t seed = 0;
        std::size_t threads = 1;
        std::string out;
    } bm;
    auto* c_bm = app.add_subcommand(
        "bench-spmm", "Time CSR multiply against the dense path on a pruned random weight");
    c_bm->add_option("--rows", bm.rows, "Weight rows")->capture_default_str();
    c_bm->add_option("--cols", bm.cols, "Weight columns")->capture_default_str();
    c_bm->add_option("--tokens", bm.tokens, "Input tokens")->capture_default_str();
    c_bm->add_option("--pattern", bm.pattern, "Sparsity pattern applied by magnitude")
        ->capture_default_str();
    c_bm->add_option("--repeats", bm.repeats, "Timing repeats (median reported)")
        ->capture_default_str();
    c_bm->add_option("--seed", bm.seed, "Generator seed")->capture_default_str();
    c_bm->add_option("--threads", bm.threads, "Threads for both paths")
        ->envname("SDS_THREADS")
        ->capture_default_str();
    c_bm->add_option("--out", bm.out, "Report JSON path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*c_gm) return run_gen_model(gm);
        if (*c_gc) return run_gen_calib(gc);

        if (*c_pr) {
            auto model = pr.model.load();
            auto calib = load_calibration(pr.calib, pr.io.seed);
            sds::SdsConfig cfg;
            cfg.method = parse_method(pr.method);
            cfg.pattern = sds::SparsityPattern::parse(pr.pattern);
            cfg.damp_fraction = pr.damp;
            cfg.scope = parse_scope(pr.scope);
            cfg.threads = pr.io.threads;
            auto split = sds::split_calibration(calib, pr.io.heldout_fraction);
            auto [pruned, masks] =
                sds::detail::prune_all_layers(model, split.heldin, cfg, "prune");
            sds::save_model(pruned, pr.out,
                            pr.out_manifest.empty() ? default_manifest_path(pr.out)
                                                    : pr.out_manifest);
            auto report = evaluate_vs_reference(model, pruned, calib, pr.io);
            log_stage(pr.io, "prune", report["layers"]);
            if (!pr.report.empty()) write_json_atomic(pr.report, report);
            return 0;
        }

        if (*c_rd) {
            auto dense = rd.dense.load();
            auto sparse = rd.sparse.load();
            auto calib = load_calibration(rd.calib, rd.io.seed);
            auto split = sds::split_calibration(calib, rd.io.heldout_fraction);
            auto out = sds::detail::redense_all_layers(dense, sparse, split.heldin,
                                                       parse_mode(rd.data_mode),
                                                       make_recon(rd.recon), rd.io.threads);
            sds::save_model(out, rd.out,
                            rd.out_manifest.empty() ? default_manifest_path(rd.out)
                                                    : rd.out_manifest);
            auto report = evaluate_vs_reference(dense, out, calib, rd.io);
            log_stage(rd.io, "redense", report["layers"]);
            if (!rd.report.empty()) write_json_atomic(rd.report, report);
            return 0;
        }

        if (*c_ad) {
            auto dense = ad.dense.load();
            auto sparse = ad.sparse.load();
            auto calib = load_calibration(ad.calib, ad.io.seed);
            auto split = sds::split_calibration(calib, ad.io.heldout_fraction);
            auto [out, masks] = sds::detail::adjust_all_layers(
                dense, sparse, split.heldin, parse_mode(ad.data_mode),
                sds::SparsityPattern::parse(ad.pattern), make_recon(ad.recon), ad.io.threads);
            sds::save_model(out, ad.out,
                            ad.out_manifest.empty() ? default_manifest_path(ad.out)
                                                    : ad.out_manifest);
            auto report = evaluate_vs_reference(dense, out, calib, ad.io);
            log_stage(ad.io, "adjust", report["layers"]);
            if (!ad.report.empty()) write_json_atomic(ad.report, report);
            return 0;
        }

        if (*c_rs) {
            auto model = rs.model.load();
            auto calib = load_calibration(rs.calib, rs.io.seed);
            sds::SdsConfig cfg;
            cfg.method = parse_method(rs.method);
            cfg.pattern = sds::SparsityPattern::parse(rs.pattern);
            cfg.data_mode = parse_mode(rs.data_mode);
            cfg.recon = make_recon(rs.recon);
            cfg.damp_fraction = rs.damp;
            cfg.early_exit = !rs.no_early_exit;
            cfg.heldout_fraction = rs.io.heldout_fraction;
            cfg.scope = parse_scope(rs.scope);
            cfg.threads = rs.io.threads;
            if (rs.msd) cfg.msd_seed_offsets = {{0, 1, 2}};
            auto [final_model, report] = sds::run_sds(model, calib, cfg);
            sds::save_model(final_model, rs.out,
                            rs.out_manifest.empty() ? default_manifest_path(rs.out)
                                                    : rs.out_manifest);
            if (!rs.report.empty()) write_json_atomic(rs.report, report.to_json());
            if (!rs.save_stages.empty()) {
                // rebuild the intermediate stages for inspection artifacts
                auto split = sds::split_calibration(calib, cfg.heldout_fraction);
                auto [m1, masks1] =
                    sds::detail::prune_all_layers(model, split.heldin, cfg, "initial");
                auto m2 = sds::detail::redense_all_layers(model, m1, split.heldin,
                                                          cfg.data_mode, cfg.recon,
                                                          cfg.threads);
                auto [m3, masks3] =
                    sds::detail::prune_all_layers(m2, split.heldin, cfg, "second_oneshot");
                save_stage_snapshot(rs.save_stages, "initial", m1);
                save_stage_snapshot(rs.save_stages, "redense", m2);
                save_stage_snapshot(rs.save_stages, "second", m3);
                save_stage_snapshot(rs.save_stages, "final", final_model);
            }
            if (rs.io.verbose) {
                for (const auto& s : report.stages) {
                    for (const auto& l : s.layers) {
                        std::cerr << "[sds] stage " << s.stage << " layer " << l.layer_idx
                                  << " mse_heldin " << l.mse_heldin << " nnz "
                                  << l.nnz_fraction << "\n";
                    }
                }
            }
            return 0;
        }

        if (*c_ev) {
            auto dense = ev.dense.load();
            auto model = ev.model.load();
            auto calib = load_calibration(ev.calib, ev.io.seed);
            auto report = evaluate_vs_reference(dense, model, calib, ev.io);
            log_stage(ev.io, "eval", report["layers"]);
            if (ev.out.empty()) {
                std::cout << report.dump(2) << "\n";
            } else {
                write_json_atomic(ev.out, report);
            }
            return 0;
        }

        if (*c_hg) {
            auto model = hg.model.load();
            sds::DenseMatrix w;
            if (hg.layer >= 0) {
                if (static_cast<std::size_t>(hg.layer) >= model.layers.size()) {
                    throw sds::DimensionError("hist: layer " + std::to_string(hg.layer) +
                                              " out of range for " +
                                              std::to_string(model.layers.size()) + " layers");
                }
                w = model.layers[static_cast<std::size_t>(hg.layer)].weight;
            } else {
                std::vector<float> pooled;
                for (const auto& l : model.layers) {
                    pooled.insert(pooled.end(), l.weight.values().begin(),
                                  l.weight.values().end());
                }
                const std::size_t total = pooled.size();
                w = sds::DenseMatrix(1, total, std::move(pooled));
            }
            auto counts = sds::weight_histogram(w, hg.bins, hg.lo, hg.hi, hg.exclude_zeros);
            sds::write_file_atomic(hg.out, sds::histogram_csv(counts, hg.lo, hg.hi));
            return 0;
        }

        if (*c_bm) {
            sds::Rng rng(bm.seed);
            auto w = sds::gaussian(rng, bm.rows, bm.cols, 0.0f, 1.0f);
            auto pruned =
                sds::prune_magnitude(w, sds::SparsityPattern::parse(bm.pattern)).weights;
            auto x = sds::gaussian(rng, bm.cols, bm.tokens, 0.0f, 1.0f);
            auto report = sds::bench(w, pruned, x, bm.repeats, bm.threads);
            if (bm.out.empty()) {
                std::cout << report.to_json().dump(2) << "\n";
            } else {
                write_json_atomic(bm.out, report.to_json());
            }
            return 0;
        }
    } catch (const sds::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const sds::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const sds::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

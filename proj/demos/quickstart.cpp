// Minimal library walkthrough: build a synthetic teacher, draw correlated
// calibration tokens, run the three-step pipeline, print the error story.

#include <cmath>
#include <cstdio>

#include "sds/sds.hpp"

int main() {
    // teacher: 32 -> 64 -> 64 -> 32, relu hidden layers, fan-in scaled weights
    sds::Rng rng(7);
    sds::LayerStack teacher;
    teacher.name = "demo-teacher";
    const std::size_t dims[] = {32, 64, 64, 32};
    for (int l = 0; l < 3; ++l) {
        sds::LinearLayer layer;
        layer.weight = sds::gaussian(rng, dims[l + 1], dims[l], 0.0f,
                                     1.0f / std::sqrt(static_cast<float>(dims[l])));
        layer.activation = l < 2 ? sds::Activation::ReLU : sds::Activation::None;
        teacher.layers.push_back(std::move(layer));
    }

    auto calib = sds::make_calibration(/*seed=*/11, /*in_dim=*/32, /*n_tokens=*/682,
                                       /*correlation=*/0.5f);

    sds::SdsConfig cfg;
    cfg.method = sds::PruneMethod::SparseGPT;
    cfg.pattern = sds::SparsityPattern::parse("2:4");
    auto [pruned, report] = sds::run_sds(teacher, calib, cfg);

    std::printf("%-16s %12s %12s %8s\n", "stage", "mse heldin", "mse heldout", "nnz");
    for (const auto& s : report.stages) {
        std::printf("%-16s %12.6f %12.6f %8.3f\n", s.stage.c_str(), s.mse_heldin,
                    s.mse_heldout, s.nnz_fraction);
    }
    std::printf("early exit taken: %s\n", report.early_exit_taken ? "yes" : "no");

    // the pruned model is a drop-in layer stack
    auto split = sds::split_calibration(calib, cfg.heldout_fraction);
    auto y = sds::forward(pruned, split.heldout);
    std::printf("pruned model output: %zux%zu\n", y.rows(), y.cols());
    return 0;
}

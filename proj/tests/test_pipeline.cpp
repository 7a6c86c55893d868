#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "sds/pipeline.hpp"

#include "helpers.hpp"

using sds::DenseMatrix;
using sds::SdsConfig;
using sds::SparsityPattern;

namespace {

sds::LayerStack teacher(std::uint64_t seed, std::vector<std::size_t> dims,
                        bool relu_hidden = true) {
    sds::Rng rng(seed);
    sds::LayerStack m;
    m.name = "teacher";
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        sds::LinearLayer layer;
        layer.weight = sds::gaussian(rng, dims[l + 1], dims[l], 0.0f,
                                     1.0f / std::sqrt(static_cast<float>(dims[l])));
        layer.activation = (relu_hidden && l + 2 < dims.size()) ? sds::Activation::ReLU
                                                                : sds::Activation::None;
        m.layers.push_back(std::move(layer));
    }
    return m;
}

nlohmann::json report_numbers(const sds::PruneReport& r) {
    auto j = r.to_json();
    j.erase("wall_times_ms");
    return j;
}

}  // namespace

TEST_CASE("split is disjoint and exhaustive") {
    auto calib = sds::make_calibration(3, 5, 40, 0.5f);
    auto split = sds::split_calibration(calib, 0.25);
    REQUIRE(split.heldout.cols() == 10);
    REQUIRE(split.heldin.cols() == 30);
    // every original column appears exactly once across the two sides
    auto column_key = [](const DenseMatrix& m, std::size_t j) {
        std::string key;
        for (std::size_t i = 0; i < m.rows(); ++i) {
            key += std::to_string(m(i, j)) + ",";
        }
        return key;
    };
    std::vector<std::string> seen;
    for (std::size_t j = 0; j < split.heldout.cols(); ++j)
        seen.push_back(column_key(split.heldout, j));
    for (std::size_t j = 0; j < split.heldin.cols(); ++j)
        seen.push_back(column_key(split.heldin, j));
    std::vector<std::string> original;
    for (std::size_t j = 0; j < calib.x0.cols(); ++j)
        original.push_back(column_key(calib.x0, j));
    std::sort(seen.begin(), seen.end());
    std::sort(original.begin(), original.end());
    REQUIRE(seen == original);
}

TEST_CASE("run_sds produces the four stages with the right sparsity story") {
    auto model = teacher(1, {16, 24, 16});
    auto calib = sds::make_calibration(2, 16, 120, 0.5f);
    SdsConfig cfg;
    cfg.method = sds::PruneMethod::Magnitude;
    cfg.pattern = SparsityPattern::nm(2, 4);
    cfg.recon.epochs = 60;
    auto [final_model, report] = sds::run_sds(model, calib, cfg);

    REQUIRE(report.stages.size() == 4);
    CHECK(report.stages[0].stage == "initial");
    CHECK(report.stages[1].stage == "redense");
    CHECK(report.stages[2].stage == "second_oneshot");
    CHECK(report.stages[3].stage == "final");

    CHECK(report.stage("initial").nnz_fraction == 0.5);
    CHECK(report.stage("final").nnz_fraction == 0.5);
    CHECK(report.stage("redense").nnz_fraction > 0.5);

    // final model conforms per layer
    for (const auto& layer : final_model.layers) {
        auto csrw = layer.weight;
        std::size_t nz = 0;
        for (float v : csrw.values()) nz += v != 0.0f ? 1 : 0;
        REQUIRE(nz <= csrw.numel() / 2);
    }
    // input model untouched
    auto fresh = teacher(1, {16, 24, 16});
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        for (std::size_t i = 0; i < model.layers[l].weight.numel(); ++i) {
            REQUIRE(model.layers[l].weight.data()[i] == fresh.layers[l].weight.data()[i]);
        }
    }
}

TEST_CASE("run_sds is deterministic and thread-count invariant") {
    auto model = teacher(5, {16, 24, 16});
    auto calib = sds::make_calibration(6, 16, 96, 0.5f);
    SdsConfig cfg;
    cfg.method = sds::PruneMethod::SparseGPT;
    cfg.pattern = SparsityPattern::nm(2, 4);
    cfg.recon.epochs = 40;

    auto [m_a, r_a] = sds::run_sds(model, calib, cfg);
    auto [m_b, r_b] = sds::run_sds(model, calib, cfg);
    REQUIRE(report_numbers(r_a).dump() == report_numbers(r_b).dump());

    cfg.threads = 4;
    auto [m_c, r_c] = sds::run_sds(model, calib, cfg);
    auto ja = report_numbers(r_a);
    auto jc = report_numbers(r_c);
    ja["config"].erase("threads");
    jc["config"].erase("threads");
    REQUIRE(ja.dump() == jc.dump());
    for (std::size_t l = 0; l < m_a.layers.size(); ++l) {
        for (std::size_t i = 0; i < m_a.layers[l].weight.numel(); ++i) {
            REQUIRE(m_a.layers[l].weight.data()[i] == m_c.layers[l].weight.data()[i]);
        }
    }
}

TEST_CASE("run_sds single-layer magnitude pipeline never loses to the initial prune") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto model = teacher(100 + seed, {16, 16}, false);
        auto calib = sds::make_calibration(200 + seed, 16, 80, 0.5f);
        SdsConfig cfg;
        cfg.method = sds::PruneMethod::Magnitude;
        cfg.pattern = SparsityPattern::unstructured(0.5);
        cfg.recon.lambda1 = 0.0;
        cfg.recon.lambda2 = 0.0;
        auto [final_model, report] = sds::run_sds(model, calib, cfg);
        REQUIRE(report.stage("final").mse_heldin <= report.stage("initial").mse_heldin);
    }
}

TEST_CASE("run_sds keeps biases untouched and reports unstructured counts") {
    auto model = teacher(19, {16, 24, 16});
    sds::Rng brng(20);
    for (auto& layer : model.layers) {
        layer.bias = sds::gaussian(brng, layer.out_dim(), 1, 0.0f, 0.1f).values();
    }
    auto calib = sds::make_calibration(21, 16, 120, 0.5f);
    SdsConfig cfg;
    cfg.method = sds::PruneMethod::SparseGPT;
    cfg.pattern = SparsityPattern::unstructured(0.5);
    cfg.recon.epochs = 40;
    auto [final_model, report] = sds::run_sds(model, calib, cfg);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        REQUIRE(final_model.layers[l].bias.has_value());
        REQUIRE(*final_model.layers[l].bias == *model.layers[l].bias);
    }
    // unstructured counts: round-half-up quota per layer, within one weight
    for (const auto& lr : report.stage("initial").layers) {
        const auto& w = model.layers[lr.layer_idx].weight;
        const double quota = std::floor(0.5 * static_cast<double>(w.numel()) + 0.5);
        REQUIRE(std::fabs(lr.nnz_fraction * static_cast<double>(w.numel()) - quota) <= 1.0);
    }
}

TEST_CASE("run_sds data modes all run and differ where they should") {
    auto model = teacher(7, {16, 24, 16});
    auto calib = sds::make_calibration(8, 16, 96, 0.5f);
    SdsConfig cfg;
    cfg.method = sds::PruneMethod::Magnitude;
    cfg.pattern = SparsityPattern::nm(2, 4);
    cfg.recon.epochs = 30;

    cfg.data_mode = sds::DataMode::SD;
    auto [m_sd, r_sd] = sds::run_sds(model, calib, cfg);
    cfg.data_mode = sds::DataMode::DD;
    auto [m_dd, r_dd] = sds::run_sds(model, calib, cfg);
    cfg.data_mode = sds::DataMode::KD;
    auto [m_kd, r_kd] = sds::run_sds(model, calib, cfg);

    // layer 0 input is x0 for every mode, deeper traces differ, so the
    // redense stage must diverge between DD and SD
    CHECK(r_sd.stage("redense").mse_heldin != r_dd.stage("redense").mse_heldin);
    CHECK(r_sd.config_echo["data_mode"] == "sd");
    CHECK(r_kd.stages.size() == 4);
}

TEST_CASE("run_sds msd redraws calibration per stage") {
    auto model = teacher(9, {16, 24, 16});
    auto calib = sds::make_calibration(10, 16, 96, 0.5f);
    SdsConfig cfg;
    cfg.method = sds::PruneMethod::Magnitude;
    cfg.pattern = SparsityPattern::nm(2, 4);
    cfg.recon.epochs = 30;
    auto [m_base, r_base] = sds::run_sds(model, calib, cfg);
    cfg.msd_seed_offsets = {{0, 1, 2}};
    auto [m_msd, r_msd] = sds::run_sds(model, calib, cfg);
    CHECK(r_base.stage("redense").mse_heldin != r_msd.stage("redense").mse_heldin);

    // file-loaded calibration has no generation parameters to redraw from
    sds::CalibrationSet loaded{calib.x0, calib.seed, std::nullopt};
    CHECK_THROWS_AS(sds::run_sds(model, loaded, cfg), sds::ConfigError);
}

TEST_CASE("run_sds validates pattern against layer shapes") {
    auto model = teacher(11, {6, 9, 6});  // in_dims 6 and 9, not divisible by 4
    auto calib = sds::make_calibration(12, 6, 64, 0.5f);
    SdsConfig cfg;
    cfg.method = sds::PruneMethod::Magnitude;
    cfg.pattern = SparsityPattern::nm(2, 4);
    try {
        sds::run_sds(model, calib, cfg);
        FAIL("expected DimensionError");
    } catch (const sds::DimensionError& e) {
        CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
}

TEST_CASE("run_sds requires full-rank calibration for sparsegpt") {
    auto model = teacher(13, {16, 24, 16});
    auto calib = sds::make_calibration(14, 16, 18, 0.5f);  // 14 held-in < 24
    SdsConfig cfg;
    cfg.method = sds::PruneMethod::SparseGPT;
    cfg.pattern = SparsityPattern::nm(2, 4);
    CHECK_THROWS_AS(sds::run_sds(model, calib, cfg), sds::ConfigError);
}

TEST_CASE("weight_histogram examples") {
    SECTION("all-zero matrix with zeros excluded counts nothing") {
        auto counts = sds::weight_histogram(DenseMatrix(4, 4), 8, -1.0, 1.0, true);
        for (auto c : counts) REQUIRE(c == 0);
    }
    SECTION("all-zero matrix with zeros included lands in the middle bin") {
        auto counts = sds::weight_histogram(DenseMatrix(4, 4), 8, -1.0, 1.0, false);
        std::uint64_t total = 0;
        for (auto c : counts) total += c;
        REQUIRE(total == 16);
        REQUIRE(counts[4] == 16);  // bin [0, 0.25)
    }
    SECTION("out-of-range values clamp into the end bins") {
        auto w = DenseMatrix::from_rows({{-5.0f, 5.0f, 0.1f}});
        auto counts = sds::weight_histogram(w, 4, -1.0, 1.0, false);
        CHECK(counts[0] == 1);
        CHECK(counts[3] == 1);
        CHECK(counts[2] == 1);
    }
    SECTION("pruned matrix with zeros excluded counts exactly the kept half") {
        auto w = testutil::random_matrix(15, 16, 16);
        auto pruned = sds::prune_magnitude(w, SparsityPattern::nm(2, 4)).weights;
        auto counts = sds::weight_histogram(pruned, 32, -4.0, 4.0, true);
        std::uint64_t total = 0;
        for (auto c : counts) total += c;
        REQUIRE(total == w.numel() / 2);
    }
    SECTION("parameter validation") {
        CHECK_THROWS_AS(sds::weight_histogram(DenseMatrix(2, 2), 0, -1.0, 1.0, false),
                        sds::ConfigError);
        CHECK_THROWS_AS(sds::weight_histogram(DenseMatrix(2, 2), 4, 1.0, -1.0, false),
                        sds::ConfigError);
    }
}

TEST_CASE("histogram csv shape") {
    auto csv = sds::histogram_csv({1, 2, 3}, -1.0, 2.0);
    CHECK(csv.rfind("bin_lo,bin_hi,count\n", 0) == 0);
    CHECK(csv.find("-1,0,1\n") != std::string::npos);
    CHECK(csv.find("1,2,3\n") != std::string::npos);
}

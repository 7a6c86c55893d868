#include <catch2/catch_amalgamated.hpp>

#include "sds/calibration.hpp"
#include "sds/pruning.hpp"
#include "sds/reconstruction.hpp"

#include "helpers.hpp"

using sds::DenseMatrix;
using sds::ReconConfig;
using sds::SparsityPattern;

namespace {

double composite_loss(const DenseMatrix& w, const DenseMatrix& wd, const DenseMatrix& x,
                      double l1, double l2) {
    const double n = static_cast<double>(x.cols());
    const double dout = static_cast<double>(w.rows());
    const double numel = static_cast<double>(w.numel());
    double data = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t t = 0; t < x.cols(); ++t) {
            double e = 0.0;
            for (std::size_t k = 0; k < w.cols(); ++k) {
                e += (static_cast<double>(w(i, k)) - static_cast<double>(wd(i, k))) *
                     static_cast<double>(x(k, t));
            }
            data += e * e;
        }
    }
    double abs_sum = 0.0, sq_sum = 0.0;
    for (float v : w.values()) {
        abs_sum += std::fabs(v);
        sq_sum += static_cast<double>(v) * v;
    }
    return data / (n * dout) + l1 * abs_sum / numel + l2 * sq_sum / numel;
}

double power_lambda_max(const std::vector<double>& a, std::size_t n) {
    std::vector<double> v(n, 1.0), w(n);
    for (int it = 0; it < 60; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += a[i * n + j] * v[j];
            w[i] = acc;
        }
        double norm = 0.0;
        for (double x : w) norm += x * x;
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm;
    }
    double num = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += a[i * n + j] * v[j];
        num += v[i] * acc;
    }
    return num;
}

}  // namespace

TEST_CASE("recon config validation") {
    ReconConfig bad;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), sds::ConfigError);
    bad = ReconConfig{};
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), sds::ConfigError);
    bad = ReconConfig{};
    bad.lambda1 = -0.1;
    CHECK_THROWS_AS(bad.validate(), sds::ConfigError);
}

TEST_CASE("redense recovers the dense weights with full-rank data and no regularizer") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto wd = testutil::random_matrix(100 + seed, 16, 16, 0.25f);
        auto calib = sds::make_calibration(200 + seed, 16, 64, 0.5f);
        auto sparse = sds::prune_magnitude(wd, SparsityPattern::nm(2, 4));
        ReconConfig cfg;
        cfg.lambda1 = 0.0;
        cfg.lambda2 = 0.0;
        auto w = sds::redense(wd, sparse.weights, calib.x0, cfg);
        REQUIRE(sds::relative_frobenius(w, wd) < 1e-2);
    }
}

TEST_CASE("redense fixed point when sparse already equals dense") {
    auto wd = testutil::random_matrix(7, 8, 8, 0.5f);
    auto x = testutil::random_matrix(8, 8, 24);
    ReconConfig cfg;
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    auto w = sds::redense(wd, wd, x, cfg);
    REQUIRE(sds::relative_frobenius(w, wd) < 1e-6);
}

TEST_CASE("redense gradient-descent ridge solution matches the closed form") {
    // l1 = 0, l2 > 0: optimum is W = Wd XX^T (XX^T + l2' I)^-1 with
    // l2' = l2 * n / d_in from the per-element normalization.
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const std::size_t d = 4, n = 32;
        auto wd = testutil::random_matrix(300 + seed, d, d);
        auto calib = sds::make_calibration(400 + seed, d, n, 0.0f);
        const auto& x = calib.x0;
        ReconConfig cfg;
        cfg.optimizer = sds::Optimizer::GradientDescent;
        cfg.lambda1 = 0.0;
        cfg.lambda2 = 0.5;
        cfg.epochs = 20000;
        auto xxt = sds::detail::gram_f64(x);
        cfg.lr = 0.9 / (2.0 * power_lambda_max(xxt, d) / (n * d) + 2.0 * cfg.lambda2 / (d * d));
        auto w = sds::redense(wd, DenseMatrix(d, d), x, cfg);

        // oracle rows: (XX^T + l2' I) w_i = XX^T wd_i, solved independently
        const double l2p = cfg.lambda2 * static_cast<double>(n) / static_cast<double>(d);
        std::vector<double> a = xxt;
        for (std::size_t i = 0; i < d; ++i) a[i * d + i] += l2p;
        DenseMatrix wstar(d, d);
        for (std::size_t i = 0; i < d; ++i) {
            std::vector<double> rhs(d, 0.0);
            for (std::size_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < d; ++k) acc += xxt[j * d + k] * wd(i, k);
                rhs[j] = acc;
            }
            auto sol = testutil::solve_oracle(a, rhs, d);
            for (std::size_t j = 0; j < d; ++j) wstar(i, j) = static_cast<float>(sol[j]);
        }
        REQUIRE(sds::relative_frobenius(w, wstar) < 1e-3);
    }
}

TEST_CASE("redense loss is non-increasing under gradient descent at the safe rate") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const std::size_t d = 12, n = 48;
        auto wd = testutil::random_matrix(500 + seed, d, d);
        auto calib = sds::make_calibration(600 + seed, d, n, 0.5f);
        auto sparse = sds::prune_magnitude(wd, SparsityPattern::unstructured(0.5));
        auto xxt = sds::detail::gram_f64(calib.x0);
        ReconConfig cfg;
        cfg.optimizer = sds::Optimizer::GradientDescent;
        cfg.lr = 1.0 / (2.0 * power_lambda_max(xxt, d) / (n * d) + 2.0 * cfg.lambda2 / (d * d));

        // epochs=k replays the same deterministic trajectory prefix
        double prev = composite_loss(sparse.weights, wd, calib.x0, cfg.lambda1, cfg.lambda2);
        for (std::size_t k = 1; k <= 40; ++k) {
            cfg.epochs = k;
            auto w = sds::redense(wd, sparse.weights, calib.x0, cfg);
            const double cur = composite_loss(w, wd, calib.x0, cfg.lambda1, cfg.lambda2);
            REQUIRE(cur <= prev + 1e-12);
            prev = cur;
        }
    }
}

TEST_CASE("redense with a dominant l1 drives most entries to zero") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const std::size_t d = 16, n = 64;
        auto wd = testutil::random_matrix(700 + seed, d, d, 0.5f);
        auto calib = sds::make_calibration(800 + seed, d, n, 0.5f);
        double data_scale = 0.0;
        {
            auto y = sds::matmul(wd, calib.x0);
            for (float v : y.values()) data_scale += static_cast<double>(v) * v;
            data_scale /= static_cast<double>(y.numel());
        }
        auto sparse = sds::prune_magnitude(wd, SparsityPattern::nm(2, 4));
        ReconConfig cfg;
        cfg.lambda1 = 10.0 * data_scale;
        cfg.lambda2 = 0.0;
        auto w = sds::redense(wd, sparse.weights, calib.x0, cfg);
        std::size_t small = 0;
        for (float v : w.values()) small += std::fabs(v) < 1e-3f ? 1 : 0;
        REQUIRE(static_cast<double>(small) / static_cast<double>(w.numel()) >= 0.9);
    }
}

TEST_CASE("redense regrows pruned connections under default regularization") {
    auto wd = testutil::random_matrix(17, 16, 16, 0.25f);
    auto calib = sds::make_calibration(18, 16, 64, 0.5f);
    auto sparse = sds::prune_magnitude(wd, SparsityPattern::nm(2, 4));
    auto w = sds::redense(wd, sparse.weights, calib.x0, ReconConfig{});
    std::size_t nnz = 0;
    for (float v : w.values()) nnz += v != 0.0f ? 1 : 0;
    REQUIRE(nnz > w.numel() / 2);  // strictly more than the 2:4 budget
    REQUIRE(sds::relative_frobenius(w, wd) < 0.5);
}

TEST_CASE("redense reports divergence with the step index") {
    auto wd = testutil::random_matrix(19, 6, 6);
    auto calib = sds::make_calibration(20, 6, 24, 0.0f);
    ReconConfig cfg;
    cfg.optimizer = sds::Optimizer::GradientDescent;
    cfg.lr = 1e18;
    cfg.epochs = 50;
    try {
        sds::redense(wd, DenseMatrix(6, 6), calib.x0, cfg);
        FAIL("expected NumericError");
    } catch (const sds::NumericError& e) {
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
}

TEST_CASE("redense shape validation") {
    ReconConfig cfg;
    CHECK_THROWS_AS(sds::redense(DenseMatrix(2, 2), DenseMatrix(2, 3), DenseMatrix(2, 4), cfg),
                    sds::DimensionError);
    CHECK_THROWS_AS(sds::redense(DenseMatrix(2, 2), DenseMatrix(2, 2), DenseMatrix(3, 4), cfg),
                    sds::DimensionError);
}

TEST_CASE("adjust_soft_mask fixed point at the constrained optimum") {
    // A 2:4-sparse dense target: the constrained optimum for its own mask is
    // the target itself, and the magnitude reselection is stable there.
    auto wd_full = testutil::random_matrix(21, 4, 8);
    auto wd = sds::prune_magnitude(wd_full, SparsityPattern::nm(2, 4)).weights;
    auto calib = sds::make_calibration(22, 8, 32, 0.5f);
    ReconConfig cfg;
    cfg.use_weight_reg = false;
    auto [w, mask] = sds::adjust_soft_mask(wd, wd, calib.x0, SparsityPattern::nm(2, 4), cfg);
    REQUIRE(sds::relative_frobenius(w, wd) < 1e-5);
    REQUIRE(mask.conforms(SparsityPattern::nm(2, 4)));
}

TEST_CASE("adjust_soft_mask rejects weight regularization") {
    ReconConfig cfg;  // use_weight_reg defaults to true
    auto w = testutil::random_matrix(23, 4, 8);
    CHECK_THROWS_AS(
        sds::adjust_soft_mask(w, w, DenseMatrix(8, 4), SparsityPattern::nm(2, 4), cfg),
        sds::ConfigError);
}

TEST_CASE("adjust_soft_mask every iterate satisfies the pattern") {
    auto wd = testutil::random_matrix(24, 8, 8);
    auto calib = sds::make_calibration(25, 8, 40, 0.5f);
    auto start = sds::prune_magnitude(wd, SparsityPattern::nm(2, 4));
    ReconConfig cfg;
    cfg.use_weight_reg = false;
    sds::SoftMaskAdjuster adj(wd, start.weights, calib.x0, SparsityPattern::nm(2, 4), cfg);
    for (int step = 0; step < 50; ++step) {
        adj.step();
        REQUIRE(adj.mask().conforms(SparsityPattern::nm(2, 4)));
        auto w = adj.masked_weights();
        for (std::size_t i = 0; i < w.numel(); ++i) {
            if (!adj.mask().bits[i]) REQUIRE(w.data()[i] == 0.0f);
        }
    }
}

TEST_CASE("adjust_soft_mask reduces the masked error from a pruned start") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t d = 8;
        auto wd = testutil::random_matrix(900 + seed, d, d);
        auto calib = sds::make_calibration(950 + seed, d, 64, 0.5f);
        auto start = sds::prune_magnitude(wd, SparsityPattern::nm(2, 4));
        ReconConfig cfg;
        cfg.use_weight_reg = false;
        auto [w, mask] =
            sds::adjust_soft_mask(wd, start.weights, calib.x0, SparsityPattern::nm(2, 4), cfg);
        const double before = testutil::weighted_error(start.weights, wd, calib.x0);
        const double after = testutil::weighted_error(w, wd, calib.x0);
        REQUIRE(after <= before);
        REQUIRE(mask.conforms(SparsityPattern::nm(2, 4)));
    }
}

TEST_CASE("adjust_soft_mask masked gradient matches central finite differences") {
    for (std::uint64_t probe = 0; probe < 10; ++probe) {
        const std::size_t rows = 3, cols = 4, n = 16;
        auto wd = testutil::random_matrix(1100 + probe, rows, cols);
        auto b0 = testutil::random_matrix(1200 + probe, rows, cols);
        auto calib = sds::make_calibration(1300 + probe, cols, n, 0.5f);
        const auto& x = calib.x0;
        const auto mask = sds::select_mask(sds::saliency_magnitude(b0),
                                           SparsityPattern::nm(2, 4));

        // implementation gradient, recovered from one plain GD step
        ReconConfig cfg;
        cfg.use_weight_reg = false;
        cfg.optimizer = sds::Optimizer::GradientDescent;
        cfg.lr = 1e-3;
        cfg.epochs = 1;
        auto [w1, m1] = sds::adjust_soft_mask(wd, b0, x, SparsityPattern::nm(2, 4), cfg);
        REQUIRE(m1.bits == mask.bits);

        // probe a handful of masked-in coordinates
        sds::Rng pick(1400 + probe);
        for (int k = 0; k < 5; ++k) {
            std::size_t i = pick.next_u64() % rows, j = pick.next_u64() % cols;
            if (!mask.kept(i, j)) continue;
            const double g_impl =
                (static_cast<double>(b0(i, j)) - static_cast<double>(w1(i, j))) / cfg.lr;

            const double h = 1e-3;
            auto f = [&](float delta) {
                DenseMatrix b = b0;
                b(i, j) += delta;
                auto masked = mask.apply(b);
                double acc = 0.0;
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t t = 0; t < n; ++t) {
                        double e = 0.0;
                        for (std::size_t c = 0; c < cols; ++c) {
                            e += (static_cast<double>(masked(r, c)) -
                                  static_cast<double>(wd(r, c))) *
                                 static_cast<double>(x(c, t));
                        }
                        acc += e * e;
                    }
                }
                return acc / (static_cast<double>(n) * rows);
            };
            const double fd = (f(static_cast<float>(h)) - f(static_cast<float>(-h))) / (2 * h);
            REQUIRE(std::fabs(g_impl - fd) / std::max(std::fabs(fd), 1e-8) < 1e-3);
        }
    }
}

TEST_CASE("adjust_soft_mask routing controls whether masked-out entries move") {
    auto wd = testutil::random_matrix(26, 4, 8);
    auto calib = sds::make_calibration(27, 8, 32, 0.5f);
    auto start = sds::prune_magnitude(wd, SparsityPattern::nm(2, 4));
    for (auto routing : {sds::MaskGradRouting::MaskedOnly, sds::MaskGradRouting::AllEntries}) {
        ReconConfig cfg;
        cfg.use_weight_reg = false;
        cfg.routing = routing;
        cfg.epochs = 3;
        sds::SoftMaskAdjuster adj(wd, start.weights, calib.x0, SparsityPattern::nm(2, 4), cfg);
        const auto m0 = adj.mask();
        adj.step();
        // after one step, inspect the buffer through a second step's mask:
        // under MaskedOnly the masked-out entries stayed exactly zero, so the
        // reselected mask cannot move; under AllEntries they picked up
        // gradient and may compete.
        if (routing == sds::MaskGradRouting::MaskedOnly) {
            REQUIRE(adj.mask().bits == m0.bits);
        }
        adj.step();
        REQUIRE(adj.mask().conforms(SparsityPattern::nm(2, 4)));
    }
}

TEST_CASE("early exit comparisons") {
    CHECK(sds::early_exit_check(1.0, 0.9));
    CHECK(sds::early_exit_check(1.0, 1.0));  // tie skips the adjustment
    CHECK_FALSE(sds::early_exit_check(0.5, 0.9));
}

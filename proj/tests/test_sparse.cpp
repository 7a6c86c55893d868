#include <catch2/catch_amalgamated.hpp>

#include "sds/pruning.hpp"
#include "sds/sparse.hpp"

#include "helpers.hpp"

using sds::DenseMatrix;

TEST_CASE("to_csr trivial shapes") {
    auto z = sds::to_csr(DenseMatrix(3, 4));
    CHECK(z.nnz() == 0);
    for (auto p : z.row_ptr) CHECK(p == 0);
    z.validate();

    auto i3 = sds::to_csr(DenseMatrix::identity(3));
    REQUIRE(i3.nnz() == 3);
    CHECK(i3.col_idx == std::vector<std::size_t>{0, 1, 2});
    i3.validate();
}

TEST_CASE("to_csr honors the zero tolerance") {
    auto w = DenseMatrix::from_rows({{0.05f, -0.5f}, {0.0f, 0.2f}});
    auto c = sds::to_csr(w, 0.1f);
    REQUIRE(c.nnz() == 2);
    CHECK(c.values[0] == -0.5f);
    CHECK(c.values[1] == 0.2f);
}

TEST_CASE("to_csr round trip on pruned matrices") {
    sds::Rng rng(31);
    for (int round = 0; round < 10; ++round) {
        const std::size_t rows = 1 + rng.next_u64() % 20;
        const std::size_t cols = 4 * (1 + rng.next_u64() % 10);
        auto w = sds::gaussian(rng, rows, cols, 0.0f, 1.0f);
        auto pruned = sds::prune_magnitude(w, sds::SparsityPattern::unstructured(0.5)).weights;
        auto csr = sds::to_csr(pruned);
        csr.validate();
        auto back = sds::to_dense(csr);
        for (std::size_t i = 0; i < pruned.numel(); ++i) {
            REQUIRE(back.data()[i] == pruned.data()[i]);
        }
    }
}

TEST_CASE("spmm identity and empty") {
    auto b = testutil::random_matrix(5, 3, 7);
    auto y = sds::spmm(sds::to_csr(DenseMatrix::identity(3)), b);
    for (std::size_t i = 0; i < b.numel(); ++i) REQUIRE(y.data()[i] == b.data()[i]);

    auto z = sds::spmm(sds::to_csr(DenseMatrix(4, 3)), b);
    for (float v : z.values()) REQUIRE(v == 0.0f);
}

TEST_CASE("spmm equals the dense path on random sparse matrices") {
    sds::Rng rng(41);
    for (int round = 0; round < 12; ++round) {
        const std::size_t rows = 16 + rng.next_u64() % 241;  // up to 256
        const std::size_t cols = 4 * (4 + rng.next_u64() % 61);
        auto w = sds::gaussian(rng, rows, cols, 0.0f, 1.0f);
        auto pruned = sds::prune_magnitude(w, sds::SparsityPattern::nm(2, 4)).weights;
        auto x = sds::gaussian(rng, cols, 8, 0.0f, 1.0f);
        auto sparse_path = sds::spmm(sds::to_csr(pruned), x);
        auto dense_path = sds::matmul(pruned, x);
        REQUIRE(sds::relative_frobenius(sparse_path, dense_path) < 1e-5);
        // threading must not change the result
        auto sparse_mt = sds::spmm(sds::to_csr(pruned), x, 4);
        for (std::size_t i = 0; i < sparse_path.numel(); ++i) {
            REQUIRE(sparse_mt.data()[i] == sparse_path.data()[i]);
        }
    }
}

TEST_CASE("spmm shape mismatch") {
    CHECK_THROWS_AS(sds::spmm(sds::to_csr(DenseMatrix(2, 3)), DenseMatrix(4, 1)),
                    sds::DimensionError);
}

TEST_CASE("csr invariant violations are caught") {
    sds::CsrMatrix c;
    c.rows = 2;
    c.cols = 3;
    c.row_ptr = {0, 1, 2};
    c.col_idx = {0, 5};  // out of range
    c.values = {1.0f, 2.0f};
    CHECK_THROWS_AS(c.validate(), sds::DimensionError);
    c.col_idx = {0, 1};
    REQUIRE_NOTHROW(c.validate());
    c.row_ptr = {0, 2, 1};  // decreasing
    CHECK_THROWS_AS(c.validate(), sds::DimensionError);
}

TEST_CASE("bench reports consistent structure") {
    auto w = testutil::random_matrix(51, 64, 64);
    auto pruned = sds::prune_magnitude(w, sds::SparsityPattern::nm(2, 4)).weights;
    auto x = testutil::random_matrix(52, 64, 32);
    auto report = sds::bench(w, pruned, x, 5);
    CHECK(report.nnz_fraction == 0.5);  // mask density, exactly
    CHECK(report.dense_ms >= 0.0);
    CHECK(report.sparse_ms >= 0.0);
    auto j = report.to_json();
    REQUIRE(j.contains("dense_ms"));
    REQUIRE(j.contains("sparse_ms"));
    REQUIRE(j.contains("speedup"));
    REQUIRE(j.contains("nnz_fraction"));

    // identical weights: same work on both paths; the ratio is hardware noise
    // and stays informational
    auto same = sds::bench(w, w, x, 5);
    CHECK(same.nnz_fraction == 1.0);
    WARN("speedup at nnz=1.0 (informational): " << same.speedup);
}

TEST_CASE("bench validates repeats") {
    auto w = testutil::random_matrix(53, 8, 8);
    CHECK_THROWS_AS(sds::bench(w, w, DenseMatrix(8, 4), 2), sds::ConfigError);
}

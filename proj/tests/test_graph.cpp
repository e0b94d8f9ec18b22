#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xcpd/errors.hpp"
#include "xcpd/graph.hpp"
#include "xcpd/linalg.hpp"
#include "xcpd/rng.hpp"

using namespace xcpd;

TEST_CASE("patch splits exactly when the length divides") {
    DenseMatrix pred(1, 4);
    for (std::size_t t = 0; t < 4; ++t) pred(0, t) = static_cast<double>(t + 1);
    const PatchResult pr = patch(pred, 2);
    CHECK(pr.grid.patch_count == 2);
    CHECK(pr.patches(0, 0) == 1.0);
    CHECK(pr.patches(0, 1) == 2.0);
    CHECK(pr.patches(1, 0) == 3.0);
    CHECK(pr.patches(1, 1) == 4.0);
}

TEST_CASE("patch counts for the horizon/16 rule") {
    DenseMatrix pred(1, 96, 0.0);
    const PatchResult pr = patch(pred, 6);  // 96 / 16
    CHECK(pr.grid.patch_len == 6);
    CHECK(pr.grid.patch_count == 16);
}

TEST_CASE("tail patch zero-pads") {
    DenseMatrix pred(1, 5);
    for (std::size_t t = 0; t < 5; ++t) pred(0, t) = static_cast<double>(t + 1);
    const PatchResult pr = patch(pred, 2);
    CHECK(pr.grid.patch_count == 3);
    CHECK(pr.patches(2, 0) == 5.0);
    CHECK(pr.patches(2, 1) == 0.0);
    CHECK(unpatch(pr.patches, pr.grid).values() == pred.values());
}

TEST_CASE("patch rejects oversized patches") {
    CHECK_THROWS_AS(patch(DenseMatrix(1, 4), 5), ConfigError);
}

TEST_CASE("patch/unpatch round trip over random shapes") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t channels = 1 + rng.next_u64() % 5;
        const std::size_t horizon = 1 + rng.next_u64() % 50;
        const std::size_t plen = 1 + rng.next_u64() % horizon;
        DenseMatrix pred(channels, horizon);
        for (double& v : pred.values()) v = rng.uniform(-2.0, 2.0);
        const PatchResult pr = patch(pred, plen);
        REQUIRE(unpatch(pr.patches, pr.grid).values() == pred.values());
    }
}

TEST_CASE("embed basics and oracle") {
    DenseMatrix patches(6, 4);
    Rng rng(8);
    for (double& v : patches.values()) v = rng.uniform(-1.0, 1.0);

    const DenseMatrix zero_w(4, 3, 0.0);
    const DenseMatrix zeros = embed(patches, zero_w, std::vector<double>(3, 0.0));
    CHECK(max_abs(zeros) == 0.0);

    const DenseMatrix id_emb =
        embed(patches, DenseMatrix::identity(4), std::vector<double>(4, 0.0));
    CHECK(id_emb.values() == patches.values());

    DenseMatrix w(4, 3);
    std::vector<double> b(3);
    for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
    for (double& v : b) v = rng.uniform(-1.0, 1.0);
    const DenseMatrix out = embed(patches, w, b);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double acc = b[j];
            for (std::size_t k = 0; k < 4; ++k) acc += patches(i, k) * w(k, j);
            CHECK(out(i, j) == doctest::Approx(acc).epsilon(1e-12));
        }
    CHECK_THROWS_AS(embed(patches, DenseMatrix(3, 3), b), DimensionError);
}

TEST_CASE("cosine adjacency basics") {
    DenseMatrix same(3, 2);
    for (std::size_t i = 0; i < 3; ++i) {
        same(i, 0) = 2.0;
        same(i, 1) = 1.0;
    }
    const AdjacencyMatrix all_one = cosine_adjacency(same);
    for (double v : all_one.values.values()) CHECK(v == doctest::Approx(1.0));

    const DenseMatrix ortho = DenseMatrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    const AdjacencyMatrix a = cosine_adjacency(ortho);
    CHECK(a.values(0, 1) == doctest::Approx(0.0));
    CHECK(a.values(0, 0) == 1.0);
}

TEST_CASE("cosine adjacency is scale invariant per row") {
    Rng rng(4);
    DenseMatrix emb(7, 5);
    for (double& v : emb.values()) v = rng.uniform(-1.0, 1.0);
    const AdjacencyMatrix base = cosine_adjacency(emb);

    DenseMatrix scaled = emb;
    for (std::size_t j = 0; j < 5; ++j) scaled(3, j) *= 3.7;
    const AdjacencyMatrix after = cosine_adjacency(scaled);
    for (std::size_t i = 0; i < base.values.values().size(); ++i)
        CHECK(std::fabs(base.values.values()[i] - after.values.values()[i]) <= 1e-12);
}

TEST_CASE("zero-norm rows become isolated nodes") {
    DenseMatrix emb(3, 2, 0.0);
    emb(0, 0) = 1.0;
    emb(2, 1) = 1.0;
    const AdjacencyMatrix a = cosine_adjacency(emb);
    CHECK(a.values(1, 1) == 1.0);
    CHECK(a.values(1, 0) == 0.0);
    CHECK(a.values(1, 2) == 0.0);
}

TEST_CASE("nonneg shift endpoints and kind guard") {
    DenseMatrix emb = DenseMatrix::from_rows({{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}});
    const AdjacencyMatrix raw = cosine_adjacency(emb);
    const AdjacencyMatrix shifted = nonneg_shift(raw);
    CHECK(shifted.values(0, 0) == 1.0);           // cos 1 -> 1
    CHECK(shifted.values(0, 1) == doctest::Approx(0.0));  // cos -1 -> 0
    CHECK(shifted.values(0, 2) == doctest::Approx(0.5));  // cos 0 -> 1/2
    CHECK_THROWS_AS(nonneg_shift(shifted), UsageError);
}

TEST_CASE("normalized laplacian of the complete two-node graph") {
    AdjacencyMatrix ones;
    ones.kind = AdjacencyKind::ShiftedNonnegative;
    ones.values = DenseMatrix(2, 2, 1.0);
    const LaplacianMatrix lap = normalized_laplacian(ones);
    CHECK(lap.values(0, 0) == doctest::Approx(0.5));
    CHECK(lap.values(0, 1) == doctest::Approx(-0.5));
    const EigenDecomposition eig = jacobi_eigh(lap.values);
    CHECK(eig.eigenvalues[0] == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(eig.eigenvalues[1] == doctest::Approx(1.0));
}

TEST_CASE("isolated graph has a zero laplacian") {
    AdjacencyMatrix iso;
    iso.kind = AdjacencyKind::ShiftedNonnegative;
    iso.values = DenseMatrix::identity(4);
    CHECK(max_abs(normalized_laplacian(iso).values) == 0.0);
}

TEST_CASE("laplacian spectra stay in the unit-operator range") {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.next_u64() % 14;
        DenseMatrix emb(n, 3);
        for (double& v : emb.values()) v = rng.uniform(-1.0, 1.0);
        const LaplacianMatrix lap = normalized_laplacian(nonneg_shift(cosine_adjacency(emb)));
        const EigenDecomposition eig = jacobi_eigh(lap.values, 1e-11);
        REQUIRE(eig.eigenvalues.front() >= -1e-8);
        REQUIRE(eig.eigenvalues.back() <= 2.0 + 1e-8);
    }
}

TEST_CASE("knn sizes follow the ratio") {
    Rng rng(9);
    DenseMatrix emb(6, 3);
    for (double& v : emb.values()) v = rng.uniform(-1.0, 1.0);
    const AdjacencyMatrix a = cosine_adjacency(emb);

    for (const EgoGraph& ego : knn_sparsify(a, 0.5)) CHECK(ego.neighbor_ids.size() == 3);
    for (const EgoGraph& ego : knn_sparsify(a, 1.0)) CHECK(ego.neighbor_ids.size() == 5);
}

TEST_CASE("knn tie-break prefers the smaller id") {
    AdjacencyMatrix a;
    a.kind = AdjacencyKind::RawCosine;
    a.values = DenseMatrix::from_rows({{1.0, 0.9, 0.9, 0.1},
                                       {0.9, 1.0, 0.2, 0.3},
                                       {0.9, 0.2, 1.0, 0.4},
                                       {0.1, 0.3, 0.4, 1.0}});
    const auto egos = knn_sparsify(a, 0.5);  // k = 2
    CHECK(egos[0].neighbor_ids == std::vector<std::size_t>{1, 2});
    CHECK(egos[0].weights[0] == doctest::Approx(0.9));
    CHECK(egos[0].weights[1] == doctest::Approx(0.9));
}

TEST_CASE("knn weights are sorted descending and exclude the center") {
    Rng rng(10);
    DenseMatrix emb(12, 4);
    for (double& v : emb.values()) v = rng.uniform(-1.0, 1.0);
    const auto egos = knn_sparsify(cosine_adjacency(emb), 0.4);
    for (const EgoGraph& ego : egos) {
        for (std::size_t i = 1; i < ego.weights.size(); ++i)
            CHECK(ego.weights[i - 1] >= ego.weights[i]);
        for (std::size_t id : ego.neighbor_ids) CHECK(id != ego.center);
    }
}

TEST_CASE("knn validates alpha") {
    const AdjacencyMatrix a = cosine_adjacency(DenseMatrix(3, 2, 1.0));
    CHECK_THROWS_AS(knn_sparsify(a, 0.0), ConfigError);
    CHECK_THROWS_AS(knn_sparsify(a, 1.5), ConfigError);
}

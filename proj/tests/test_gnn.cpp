#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "xcpd/errors.hpp"
#include "xcpd/gnn.hpp"
#include "xcpd/rng.hpp"

using namespace xcpd;

namespace {

FilteredAdjacency empty_adjacency(std::size_t n) {
    FilteredAdjacency adj;
    adj.size = n;
    adj.rows.resize(n);
    return adj;
}

GnnLayerParams random_layer(Rng& rng, std::size_t d) {
    GnnLayerParams p;
    p.w_self = DenseMatrix(d, d);
    p.w_neigh = DenseMatrix(d, d);
    p.bias.resize(d);
    for (double& v : p.w_self.values()) v = rng.uniform(-1.0, 1.0);
    for (double& v : p.w_neigh.values()) v = rng.uniform(-1.0, 1.0);
    for (double& v : p.bias) v = rng.uniform(-1.0, 1.0);
    return p;
}

}  // namespace

TEST_CASE("self-only propagation with identity weights is a relu") {
    const std::size_t n = 4, d = 3;
    Rng rng(1);
    NodeStates states{0, DenseMatrix(n, d)};
    for (double& v : states.values.values()) v = rng.uniform(-1.0, 1.0);

    GnnLayerParams p;
    p.w_self = DenseMatrix::identity(d);
    p.w_neigh = DenseMatrix(d, d, 0.0);
    p.bias.assign(d, 0.0);

    const NodeStates out = propagate_layer(states, empty_adjacency(n), p);
    CHECK(out.layer == 1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c)
            CHECK(out.values(i, c) == std::max(states.values(i, c), 0.0));
}

TEST_CASE("a single neighbor passes through unscaled") {
    const std::size_t n = 2, d = 2;
    NodeStates states{0, DenseMatrix(n, d)};
    states.values(1, 0) = 0.7;
    states.values(1, 1) = -0.4;

    FilteredAdjacency adj = empty_adjacency(n);
    adj.rows[0].emplace_back(1, 0.42);  // any usable weight normalizes to one

    GnnLayerParams p;
    p.w_self = DenseMatrix(d, d, 0.0);
    p.w_neigh = DenseMatrix::identity(d);
    p.bias.assign(d, 0.0);

    const NodeStates out = propagate_layer(states, adj, p);
    CHECK(out.values(0, 0) == doctest::Approx(0.7));
    CHECK(out.values(0, 1) == doctest::Approx(0.0));  // relu of -0.4
}

TEST_CASE("propagation matches a per-node loop oracle") {
    Rng rng(2);
    const std::size_t n = 7, d = 4;
    NodeStates states{0, DenseMatrix(n, d)};
    for (double& v : states.values.values()) v = rng.uniform(-1.0, 1.0);

    FilteredAdjacency adj = empty_adjacency(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j && rng.uniform() < 0.4) adj.rows[i].emplace_back(j, rng.uniform(-1.0, 1.0));

    const GnnLayerParams p = random_layer(rng, d);
    const NodeStates out = propagate_layer(states, adj, p);

    for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (const auto& [j, w] : adj.rows[i]) total += (w + 1.0) / 2.0;
        for (std::size_t c = 0; c < d; ++c) {
            double msg = 0.0;
            if (total > 0.0)
                for (const auto& [j, w] : adj.rows[i])
                    msg += (w + 1.0) / 2.0 / total * states.values(j, c);
            double z = p.bias[c];
            for (std::size_t k = 0; k < d; ++k) {
                z += states.values(i, k) * p.w_self(k, c);
                double m_k = 0.0;
                if (total > 0.0)
                    for (const auto& [j, w] : adj.rows[i])
                        m_k += (w + 1.0) / 2.0 / total * states.values(j, k);
                z += m_k * p.w_neigh(k, c);
            }
            CHECK(out.values(i, c) == doctest::Approx(std::max(z, 0.0)).epsilon(1e-10));
        }
    }
}

TEST_CASE("messages stay inside the neighbor envelope") {
    Rng rng(3);
    const std::size_t n = 9, d = 3;
    DenseMatrix states(n, d);
    for (double& v : states.values()) v = rng.uniform(-2.0, 2.0);
    FilteredAdjacency adj = empty_adjacency(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j && rng.uniform() < 0.5) adj.rows[i].emplace_back(j, rng.uniform(-0.9, 1.0));

    const DenseMatrix msg = neighbor_messages(states, adj);
    for (std::size_t i = 0; i < n; ++i) {
        if (adj.rows[i].empty()) continue;
        for (std::size_t c = 0; c < d; ++c) {
            double lo = 1e300, hi = -1e300;
            for (const auto& [j, w] : adj.rows[i]) {
                lo = std::min(lo, states(j, c));
                hi = std::max(hi, states(j, c));
            }
            CHECK(msg(i, c) >= lo - 1e-12);
            CHECK(msg(i, c) <= hi + 1e-12);
        }
    }
}

TEST_CASE("multi-layer propagation composes single layers") {
    Rng rng(4);
    const std::size_t n = 6, d = 3;
    NodeStates states{0, DenseMatrix(n, d)};
    for (double& v : states.values.values()) v = rng.uniform(-1.0, 1.0);
    FilteredAdjacency adj = empty_adjacency(n);
    for (std::size_t i = 0; i < n; ++i) adj.rows[i].emplace_back((i + 1) % n, 0.5);

    std::vector<GnnLayerParams> layers;
    for (int l = 0; l < 3; ++l) layers.push_back(random_layer(rng, d));

    const NodeStates chained = propagate(states, adj, layers);
    NodeStates manual = states;
    for (const auto& layer : layers) manual = propagate_layer(manual, adj, layer);
    CHECK(chained.layer == 3);
    CHECK(chained.values.values() == manual.values.values());

    CHECK_THROWS_AS(propagate(states, adj, {}), ConfigError);
}

TEST_CASE("zero parameters map everything to relu of bias") {
    const std::size_t n = 5, d = 2;
    NodeStates states{0, DenseMatrix(n, d, 0.3)};
    GnnLayerParams p;
    p.w_self = DenseMatrix(d, d, 0.0);
    p.w_neigh = DenseMatrix(d, d, 0.0);
    p.bias = {0.4, -0.2};
    const NodeStates out = propagate_layer(states, empty_adjacency(n), p);
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(out.values(i, 0) == doctest::Approx(0.4));
        CHECK(out.values(i, 1) == 0.0);
    }
}

TEST_CASE("node permutation equivariance") {
    Rng rng(5);
    const std::size_t n = 6, d = 3;
    NodeStates states{0, DenseMatrix(n, d)};
    for (double& v : states.values.values()) v = rng.uniform(-1.0, 1.0);
    FilteredAdjacency adj = empty_adjacency(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j && rng.uniform() < 0.4) adj.rows[i].emplace_back(j, rng.uniform(-1.0, 1.0));
    const GnnLayerParams p = random_layer(rng, d);

    const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
    NodeStates permuted{0, DenseMatrix(n, d)};
    FilteredAdjacency padj = empty_adjacency(n);
    std::vector<std::size_t> inverse(n);
    for (std::size_t i = 0; i < n; ++i) inverse[perm[i]] = i;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) permuted.values(i, c) = states.values(perm[i], c);
        for (const auto& [j, w] : adj.rows[perm[i]]) padj.rows[i].emplace_back(inverse[j], w);
    }

    const NodeStates a = propagate_layer(states, adj, p);
    const NodeStates b = propagate_layer(permuted, padj, p);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c)
            CHECK(b.values(i, c) == doctest::Approx(a.values(perm[i], c)).epsilon(1e-12));
}

TEST_CASE("projection basics and grid placement") {
    const std::size_t c = 2, horizon = 5, plen = 2;
    DenseMatrix pred(c, horizon);
    Rng rng(6);
    for (double& v : pred.values()) v = rng.uniform(-1.0, 1.0);
    const PatchResult pr = patch(pred, plen);

    NodeStates states{1, pr.patches};  // d = plen
    const DenseMatrix zero = project_to_time(states, DenseMatrix(plen, plen, 0.0),
                                             std::vector<double>(plen, 0.0), pr.grid);
    CHECK(max_abs(zero) == 0.0);

    const DenseMatrix round = project_to_time(states, DenseMatrix::identity(plen),
                                              std::vector<double>(plen, 0.0), pr.grid);
    CHECK(round.values() == pred.values());
}

TEST_CASE("projection matches a place-by-index oracle") {
    Rng rng(7);
    const std::size_t channels = 3, horizon = 7, plen = 3, d = 4;
    DenseMatrix pred(channels, horizon);
    for (double& v : pred.values()) v = rng.uniform(-1.0, 1.0);
    const PatchGrid grid = patch(pred, plen).grid;

    NodeStates states{2, DenseMatrix(grid.node_count(), d)};
    for (double& v : states.values.values()) v = rng.uniform(-1.0, 1.0);
    DenseMatrix w(d, plen);
    std::vector<double> b(plen);
    for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
    for (double& v : b) v = rng.uniform(-1.0, 1.0);

    const DenseMatrix out = project_to_time(states, w, b, grid);
    for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t t = 0; t < horizon; ++t) {
            const std::size_t p = t / plen, r = t % plen;
            double expect = b[r];
            for (std::size_t k = 0; k < d; ++k)
                expect += states.values(grid.node_index(ch, p), k) * w(k, r);
            CHECK(out(ch, t) == doctest::Approx(expect).epsilon(1e-12));
        }

    CHECK_THROWS_AS(project_to_time(states, DenseMatrix(d + 1, plen), b, grid), DimensionError);
}

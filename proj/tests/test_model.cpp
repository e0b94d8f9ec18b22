#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include "xcpd/errors.hpp"
#include "xcpd/model.hpp"
#include "xcpd/train.hpp"

using namespace xcpd;

namespace {

using Grid2 = std::vector<std::vector<double>>;

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Grid2 to_grid(const DenseMatrix& m) {
    Grid2 g(m.rows(), std::vector<double>(m.cols()));
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
    return g;
}

// Straight-line re-implementation of the whole pipeline with plain loops and
// none of the library's building blocks. Only meaningful at evaluation time
// (no routing noise).
Grid2 pipeline_oracle(const Grid2& backbone, const PluginParameters& params,
                      const PluginConfig& cfg, const Grid2& basis_u) {
    const std::size_t C = cfg.channels, T = cfg.horizon, P = cfg.patch_len, d = cfg.embed_dim;
    const std::size_t N = (T + P - 1) / P;
    const std::size_t n = C * N;

    // patches
    Grid2 patches(n, std::vector<double>(P, 0.0));
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < N; ++p)
            for (std::size_t r = 0; r < P; ++r)
                if (p * P + r < T) patches[c * N + p][r] = backbone[c][p * P + r];

    // linear embedding
    Grid2 emb(n, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            double acc = params.embed_b[k];
            for (std::size_t r = 0; r < P; ++r) acc += patches[i][r] * params.embed_w(r, k);
            emb[i][k] = acc;
        }

    // cosine similarities
    std::vector<double> norms(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += emb[i][k] * emb[i][k];
        norms[i] = std::sqrt(s);
    }
    Grid2 cos(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        cos[i][i] = 1.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || norms[i] <= 1e-12 || norms[j] <= 1e-12) continue;
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += emb[i][k] * emb[j][k];
            cos[i][j] = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
        }
    }

    // spectral energies with per-node conservation
    Grid2 spc(n, std::vector<double>(d, 0.0));
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < d; ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += basis_u[i][j] * emb[i][k];
            spc[j][k] = acc;
        }
    std::vector<double> spc_norm(n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < d; ++k) spc_norm[j] += spc[j][k] * spc[j][k];
    Grid2 energy(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        double raw = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            energy[i][j] = basis_u[i][j] * basis_u[i][j] * spc_norm[j];
            raw += energy[i][j];
        }
        if (raw > 0.0) {
            const double scale = norms[i] * norms[i] / raw;
            for (std::size_t j = 0; j < n; ++j) energy[i][j] *= scale;
        }
    }

    // band memberships and grouping
    const double tau1 = static_cast<double>(n) / 3.0, tau2 = 2.0 * static_cast<double>(n) / 3.0;
    Grid2 alpha(n, std::vector<double>(3, 0.0));
    for (std::size_t idx = 0; idx < n; ++idx) {
        const double j = static_cast<double>(idx + 1);
        alpha[idx][0] = sig(cfg.temperature * (tau1 - j));
        alpha[idx][2] = sig(cfg.temperature * (j - tau2));
        alpha[idx][1] = 1.0 - alpha[idx][0] - alpha[idx][2];
    }
    std::vector<int> label(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        double sums[3] = {0.0, 0.0, 0.0};
        for (std::size_t j = 0; j < n; ++j)
            for (int b = 0; b < 3; ++b) sums[b] += alpha[j][b] * energy[i][j];
        for (int b = 1; b < 3; ++b)
            if (sums[b] > sums[label[i]]) label[i] = b;
    }

    // k nearest neighbors per center on raw cosine
    std::size_t k = static_cast<std::size_t>(cfg.knn_alpha * static_cast<double>(n));
    if (k > n - 1) k = n - 1;
    std::vector<std::vector<std::size_t>> ego(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> cand;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand.push_back(j);
        std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
            if (cos[i][a] != cos[i][b]) return cos[i][a] > cos[i][b];
            return a < b;
        });
        cand.resize(std::min(k, cand.size()));
        ego[i] = cand;
    }

    // routing at evaluation: clean scores only
    std::vector<std::vector<std::size_t>> kept(n);
    for (std::size_t i = 0; i < n; ++i) {
        double psi[3];
        for (int b = 0; b < 3; ++b) {
            psi[b] = params.router_clean_b[b];
            for (std::size_t q = 0; q < d; ++q) psi[b] += params.router_clean_w(q, b) * emb[i][q];
        }
        const double m = std::max({psi[0], psi[1], psi[2]});
        double probs[3], z = 0.0;
        for (int b = 0; b < 3; ++b) z += probs[b] = std::exp(psi[b] - m);
        for (int b = 0; b < 3; ++b) probs[b] /= z;
        int order[3] = {0, 1, 2};
        std::sort(order, order + 3, [&](int a, int b) {
            if (probs[a] != probs[b]) return probs[a] > probs[b];
            return a < b;
        });
        const double cum[3] = {probs[order[0]], probs[order[0]] + probs[order[1]], 1.0};
        int s = 3;
        for (int l = 0; l < 3; ++l)
            if (cum[l] >= cfg.router_tau) {
                s = l + 1;
                break;
            }
        bool experts[3] = {false, false, false};
        for (int l = 0; l < s; ++l) experts[order[l]] = true;
        for (std::size_t j : ego[i])
            if (experts[label[j]]) kept[i].push_back(j);
        if (kept[i].size() > std::max<std::size_t>(k, 1)) kept[i].resize(std::max<std::size_t>(k, 1));
    }

    // one message-passing stack
    Grid2 h = emb;
    for (std::size_t layer = 0; layer < cfg.gnn_layers; ++layer) {
        Grid2 next(n, std::vector<double>(d, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> msg(d, 0.0);
            double total = 0.0;
            for (std::size_t j : kept[i]) total += (cos[i][j] + 1.0) / 2.0;
            if (total > 0.0)
                for (std::size_t j : kept[i]) {
                    const double w = (cos[i][j] + 1.0) / 2.0 / total;
                    for (std::size_t q = 0; q < d; ++q) msg[q] += w * h[j][q];
                }
            for (std::size_t q = 0; q < d; ++q) {
                double z = params.gnn[layer].bias[q];
                for (std::size_t p = 0; p < d; ++p) {
                    z += h[i][p] * params.gnn[layer].w_self(p, q);
                    z += msg[p] * params.gnn[layer].w_neigh(p, q);
                }
                next[i][q] = std::max(z, 0.0);
            }
        }
        h = next;
    }

    // node projection onto the grid
    Grid2 grid_out(C, std::vector<double>(T, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i / N, p = i % N;
        for (std::size_t r = 0; r < P; ++r) {
            if (p * P + r >= T) continue;
            double acc = params.node_proj_b[r];
            for (std::size_t q = 0; q < d; ++q) acc += h[i][q] * params.node_proj_w(q, r);
            grid_out[c][p * P + r] = acc;
        }
    }

    // dual-path gated residual
    Grid2 out(C, std::vector<double>(T, 0.0));
    for (std::size_t c = 0; c < C; ++c) {
        const double gg = sig(params.gate_gnn[c]);
        const double gl = sig(params.gate_lin[c]);
        for (std::size_t t = 0; t < T; ++t) {
            double dg = params.time_proj_b[t];
            double dl = params.lin_path_b[t];
            for (std::size_t u = 0; u < T; ++u) {
                dg += params.time_proj_w(t, u) * grid_out[c][u];
                dl += params.lin_path_w(t, u) * backbone[c][u];
            }
            out[c][t] = backbone[c][t] + gg * dg + gl * dl;
        }
    }
    return out;
}

SharedBasis basis_for(const DenseMatrix& pred, const PluginParameters& params,
                      const PluginConfig& cfg) {
    const PatchResult pr = patch(pred, cfg.patch_len);
    const DenseMatrix emb = embed(pr.patches, params.embed_w, params.embed_b);
    return fit_shared_basis({normalized_laplacian(nonneg_shift(cosine_adjacency(emb)))});
}

}  // namespace

TEST_CASE("zero-initialized plugin is the identity, bitwise") {
    PluginConfig cfg;
    cfg.channels = 3;
    cfg.horizon = 10;
    cfg.patch_len = 4;
    cfg.embed_dim = 6;
    Rng rng(1);
    DenseMatrix pred(cfg.channels, cfg.horizon);
    for (double& v : pred.values()) v = rng.uniform(-3.0, 3.0);
    pred(1, 2) = -0.0;  // the sign of zero must survive too

    const PluginParameters params = init_params(cfg, rng);
    const SharedBasis basis = basis_for(pred, params, cfg);
    Rng fwd_rng(2);
    const ForwardTrace trace = forward(pred, params, cfg, basis, true, fwd_rng);
    CHECK(std::memcmp(trace.prediction.values().data(), pred.values().data(),
                      pred.values().size() * sizeof(double)) == 0);
}

TEST_CASE("gates at minus thirty suppress the corrections") {
    PluginConfig cfg;
    cfg.channels = 2;
    cfg.horizon = 12;
    cfg.patch_len = 3;
    cfg.embed_dim = 4;
    Rng rng(3);
    DenseMatrix pred(cfg.channels, cfg.horizon);
    for (double& v : pred.values()) v = rng.uniform(-1.0, 1.0);

    PluginParameters params = init_params(cfg, rng);
    const SharedBasis basis = basis_for(pred, params, cfg);
    randomize_params(params, cfg, rng);
    for (double& g : params.gate_gnn) g = -30.0;
    for (double& g : params.gate_lin) g = -30.0;

    Rng fwd_rng(4);
    const ForwardTrace trace = forward(pred, params, cfg, basis, false, fwd_rng);
    double worst = 0.0;
    for (std::size_t i = 0; i < pred.values().size(); ++i)
        worst = std::max(worst, std::fabs(trace.prediction.values()[i] - pred.values()[i]));
    CHECK(worst <= 1e-9 * (frobenius_norm(trace.delta_gnn) + frobenius_norm(trace.delta_lin)));
    CHECK(worst > 0.0);
}

TEST_CASE("tiny model matches the straight-line oracle") {
    PluginConfig cfg;
    cfg.channels = 2;
    cfg.horizon = 8;
    cfg.patch_len = 4;
    cfg.embed_dim = 3;
    cfg.gnn_layers = 1;
    cfg.noise_eps = 0.0;

    for (double tau : {0.0, 0.5}) {
        cfg.router_tau = tau;
        Rng rng(5);
        DenseMatrix pred(cfg.channels, cfg.horizon);
        for (double& v : pred.values()) v = rng.uniform(-1.0, 1.0);
        PluginParameters params = init_params(cfg, rng);
        const SharedBasis basis = basis_for(pred, params, cfg);
        randomize_params(params, cfg, rng);

        Rng fwd_rng(6);
        const ForwardTrace trace = forward(pred, params, cfg, basis, false, fwd_rng);
        const Grid2 expect = pipeline_oracle(to_grid(pred), params, cfg, to_grid(basis.basis));
        for (std::size_t c = 0; c < cfg.channels; ++c)
            for (std::size_t t = 0; t < cfg.horizon; ++t)
                REQUIRE(trace.prediction(c, t) ==
                        doctest::Approx(expect[c][t]).epsilon(1e-9));
    }
}

TEST_CASE("mse follows the channel-sum time-average convention") {
    DenseMatrix a(1, 2, 0.0), b(1, 2, 1.0);
    CHECK(loss_mse(b, b) == 0.0);
    CHECK(loss_mse(a, b) == doctest::Approx(1.0));

    DenseMatrix p(2, 1), t(2, 1, 0.0);
    p(0, 0) = 3.0;
    p(1, 0) = 4.0;
    CHECK(loss_mse(p, t) == doctest::Approx(25.0));
    CHECK_THROWS_AS(loss_mse(a, p), DimensionError);
}

TEST_CASE("entropy and balance closed forms") {
    const double delta = 1e-8;
    DenseMatrix uniform(7, 3, 1.0 / 3.0);
    CHECK(loss_entropy(uniform, delta) == doctest::Approx(std::log(3.0)).epsilon(1e-6));
    CHECK(loss_balance(uniform, delta) == 0.0);

    DenseMatrix onehot(5, 3, 0.0);
    for (std::size_t i = 0; i < 5; ++i) onehot(i, i % 3) = 1.0;
    CHECK(std::fabs(loss_entropy(onehot, delta)) <= 1e-7);
    CHECK(loss_balance(onehot, delta) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));

    // mixed rows against a scalar oracle
    DenseMatrix mixed(2, 3);
    mixed(0, 0) = 0.6; mixed(0, 1) = 0.3; mixed(0, 2) = 0.1;
    mixed(1, 0) = 0.2; mixed(1, 1) = 0.5; mixed(1, 2) = 0.3;
    double ent = 0.0, bal = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        double mean = 0.0, var = 0.0;
        for (int b = 0; b < 3; ++b) {
            ent -= mixed(i, b) * std::log(mixed(i, b) + delta);
            mean += mixed(i, b) / 3.0;
        }
        for (int b = 0; b < 3; ++b) var += (mixed(i, b) - mean) * (mixed(i, b) - mean) / 3.0;
        bal += std::sqrt(var) / (mean + delta);
    }
    CHECK(loss_entropy(mixed, delta) == doctest::Approx(ent / 2.0).epsilon(1e-12));
    CHECK(loss_balance(mixed, delta) == doctest::Approx(bal / 2.0).epsilon(1e-12));
}

TEST_CASE("total loss is linear in the regularizer weights") {
    PluginConfig cfg;
    cfg.channels = 2;
    cfg.horizon = 6;
    cfg.patch_len = 3;
    cfg.embed_dim = 3;
    Rng rng(7);
    DenseMatrix pred(cfg.channels, cfg.horizon), truth(cfg.channels, cfg.horizon);
    for (double& v : pred.values()) v = rng.uniform(-1.0, 1.0);
    for (double& v : truth.values()) v = rng.uniform(-1.0, 1.0);
    PluginParameters params = init_params(cfg, rng);
    const SharedBasis basis = basis_for(pred, params, cfg);
    randomize_params(params, cfg, rng);

    Rng fwd_rng(8);
    const ForwardTrace trace = forward(pred, params, cfg, basis, false, fwd_rng);

    PluginConfig zero = cfg;
    zero.mu = 0.0;
    zero.beta = 0.0;
    CHECK(total_loss(trace, truth, zero) == loss_mse(trace.prediction, truth));

    PluginConfig weighted = cfg;
    weighted.mu = 0.37;
    weighted.beta = 1.21;
    const double expect = loss_mse(trace.prediction, truth) +
                          0.37 * loss_entropy(trace.routing_probs, cfg.delta_stab) +
                          1.21 * loss_balance(trace.routing_probs, cfg.delta_stab);
    CHECK(total_loss(trace, truth, weighted) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("init is seed-deterministic and seed-sensitive") {
    PluginConfig cfg;
    Rng a(11), b(11), c(12);
    const PluginParameters pa = init_params(cfg, a);
    const PluginParameters pb = init_params(cfg, b);
    const PluginParameters pc = init_params(cfg, c);
    CHECK(pa.embed_w.values() == pb.embed_w.values());
    CHECK(pa.router_clean_w.values() == pb.router_clean_w.values());
    CHECK(pa.embed_w.values() != pc.embed_w.values());
    CHECK(max_abs(pa.time_proj_w) == 0.0);
    CHECK(pa.time_proj_b == std::vector<double>(cfg.horizon, 0.0));
    CHECK(max_abs(pa.lin_path_w) == 0.0);
    for (double g : pa.gate_gnn) CHECK(g == 0.0);
}

TEST_CASE("checkpoint round trip is bitwise") {
    PluginConfig cfg;
    cfg.channels = 3;
    cfg.horizon = 9;
    cfg.patch_len = 3;
    cfg.embed_dim = 5;
    cfg.router_tau = 0.0;
    Rng rng(13);
    DenseMatrix pred(cfg.channels, cfg.horizon);
    for (double& v : pred.values()) v = rng.uniform(-1.0, 1.0);
    PluginParameters params = init_params(cfg, rng);
    const SharedBasis basis = basis_for(pred, params, cfg);
    randomize_params(params, cfg, rng);

    const char* path = "checkpoint_roundtrip.bin";
    save_checkpoint(path, {cfg, params, basis});
    const Checkpoint loaded = load_checkpoint(path);

    std::vector<double> before, after;
    flatten_params(params, before);
    flatten_params(loaded.params, after);
    CHECK(before == after);
    CHECK(loaded.basis.basis.values() == basis.basis.values());
    CHECK(loaded.basis.eigengap == basis.eigengap);
    CHECK(loaded.config.router_tau == cfg.router_tau);
    CHECK(loaded.config.horizon == cfg.horizon);
    std::remove(path);

    CHECK_THROWS_AS(load_checkpoint("missing_checkpoint.bin"), IoError);
}

TEST_CASE("forward validates the basis dimension") {
    PluginConfig cfg;
    cfg.channels = 2;
    cfg.horizon = 8;
    cfg.patch_len = 4;
    cfg.embed_dim = 3;
    Rng rng(14);
    DenseMatrix pred(cfg.channels, cfg.horizon, 0.5);
    const PluginParameters params = init_params(cfg, rng);
    SharedBasis wrong;
    wrong.basis = DenseMatrix::identity(7);
    wrong.eigenvalues.assign(7, 0.0);
    wrong.mean_laplacian = DenseMatrix(7, 7, 0.0);
    CHECK_THROWS_AS(forward(pred, params, cfg, wrong, false, rng), ConfigError);
}

#include "xcpd/routing.hpp"

#include <algorithm>
#include <cmath>

#include "xcpd/errors.hpp"

namespace xcpd {

namespace {
double softplus(double x) {
    // log1p(exp(x)) with the usual large-argument shortcut.
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}
}  // namespace

std::array<double, 3> routing_scores_replay(const double* x, std::size_t dim,
                                            const DenseMatrix& w_clean,
                                            const std::array<double, 3>& b_clean,
                                            const DenseMatrix& w_noise,
                                            const std::array<double, 3>& b_noise,
                                            const std::array<double, 3>& noise) {
    if (w_clean.rows() != dim || w_clean.cols() != 3 || w_noise.rows() != dim ||
        w_noise.cols() != 3)
        throw DimensionError("routing_scores: weight shapes do not match input dimension");
    std::array<double, 3> psi{};
    for (int b = 0; b < 3; ++b) {
        double clean = b_clean[b];
        double pre = b_noise[b];
        for (std::size_t i = 0; i < dim; ++i) {
            clean += w_clean(i, b) * x[i];
            pre += w_noise(i, b) * x[i];
        }
        psi[b] = clean + noise[b] * softplus(pre);
    }
    return psi;
}

std::array<double, 3> routing_scores(const double* x, std::size_t dim, const DenseMatrix& w_clean,
                                     const std::array<double, 3>& b_clean,
                                     const DenseMatrix& w_noise,
                                     const std::array<double, 3>& b_noise, double eps,
                                     bool training, Rng& rng,
                                     std::array<double, 3>* noise_out) {
    if (eps < 0.0) throw ConfigError("routing_scores: eps must be nonnegative");
    std::array<double, 3> eta{0.0, 0.0, 0.0};
    if (training && eps > 0.0)
        for (int b = 0; b < 3; ++b) eta[b] = eps * rng.normal();
    if (noise_out) *noise_out = eta;
    return routing_scores_replay(x, dim, w_clean, b_clean, w_noise, b_noise, eta);
}

RoutingDecision select_experts(const std::array<double, 3>& psi, double tau, std::size_t node) {
    if (tau < 0.0 || tau > 1.0) throw ConfigError("select_experts: tau must be in [0, 1]");

    RoutingDecision out;
    out.node = node;
    const double m = std::max({psi[0], psi[1], psi[2]});
    double z = 0.0;
    for (int b = 0; b < 3; ++b) {
        out.probs[b] = std::exp(psi[b] - m);
        z += out.probs[b];
    }
    for (int b = 0; b < 3; ++b) out.probs[b] /= z;

    out.order = {0, 1, 2};
    std::sort(out.order.begin(), out.order.end(), [&](int a, int b) {
        if (out.probs[a] != out.probs[b]) return out.probs[a] > out.probs[b];
        return a < b;
    });

    // Cumulative mass of the full prefix is exactly one on the simplex; pin
    // it so tau = 1 always has a reachable prefix.
    double cum[3];
    cum[0] = out.probs[out.order[0]];
    cum[1] = cum[0] + out.probs[out.order[1]];
    cum[2] = 1.0;

    out.expert_count = 3;
    for (int l = 0; l < 3; ++l) {
        if (cum[l] >= tau) {
            out.expert_count = l + 1;
            break;
        }
    }
    out.experts = {false, false, false};
    for (int l = 0; l < out.expert_count; ++l) out.experts[out.order[l]] = true;
    return out;
}

EgoGraph filter_edges(const EgoGraph& ego, const GroupAssignment& groups,
                      const RoutingDecision& decision) {
    if (decision.node != ego.center)
        throw UsageError("filter_edges: decision does not belong to this ego-graph");
    EgoGraph out;
    out.center = ego.center;
    for (std::size_t idx = 0; idx < ego.neighbor_ids.size(); ++idx) {
        const std::size_t j = ego.neighbor_ids[idx];
        if (decision.experts[groups.labels[j]]) {
            out.neighbor_ids.push_back(j);
            out.weights.push_back(ego.weights[idx]);
        }
    }
    return out;
}

FilteredAdjacency assemble_adjacency(const std::vector<EgoGraph>& filtered, std::size_t k) {
    if (k == 0) throw ConfigError("assemble_adjacency: k must be at least 1");
    FilteredAdjacency out;
    out.size = filtered.size();
    out.rows.resize(filtered.size());
    std::vector<std::size_t> idx;
    for (const EgoGraph& ego : filtered) {
        auto& row = out.rows[ego.center];
        const std::size_t m = ego.neighbor_ids.size();
        idx.resize(m);
        for (std::size_t i = 0; i < m; ++i) idx[i] = i;
        const std::size_t keep = std::min(k, m);
        std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(),
                          [&](std::size_t a, std::size_t b) {
                              if (ego.weights[a] != ego.weights[b])
                                  return ego.weights[a] > ego.weights[b];
                              return ego.neighbor_ids[a] < ego.neighbor_ids[b];
                          });
        row.reserve(keep);
        for (std::size_t i = 0; i < keep; ++i)
            row.emplace_back(ego.neighbor_ids[idx[i]], ego.weights[idx[i]]);
    }
    return out;
}

}  // namespace xcpd

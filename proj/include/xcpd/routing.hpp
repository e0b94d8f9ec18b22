#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "xcpd/graph.hpp"
#include "xcpd/linalg.hpp"
#include "xcpd/rng.hpp"
#include "xcpd/spectral.hpp"

namespace xcpd {

// Per-node expert selection: softmax probabilities over the three band
// filters, their descending order, and the minimal prefix whose cumulative
// probability reaches the threshold.
struct RoutingDecision {
    std::size_t node = 0;
    std::array<double, 3> probs{};    // simplex, indexed by band
    std::array<int, 3> order{};       // bands sorted by descending prob, ties toward low
    int expert_count = 1;             // s
    std::array<bool, 3> experts{};    // experts[b]: band b selected
};

// Row-sparse directed adjacency after filtering: row i lists the retained
// neighbors node i aggregates from, with their raw similarity weights.
struct FilteredAdjacency {
    std::size_t size = 0;
    std::vector<std::vector<std::pair<std::size_t, double>>> rows;
};

// Routing scores psi = W_c^T x + b_c + eta .* softplus(W_n^T x + b_n).
// eta is per-component standard-normal noise scaled by eps during training
// and exactly zero at evaluation. `noise_out`, when given, receives the eta
// values actually used (needed to replay the pass for gradients).
std::array<double, 3> routing_scores(const double* x, std::size_t dim, const DenseMatrix& w_clean,
                                     const std::array<double, 3>& b_clean,
                                     const DenseMatrix& w_noise,
                                     const std::array<double, 3>& b_noise, double eps,
                                     bool training, Rng& rng,
                                     std::array<double, 3>* noise_out = nullptr);

// Same arithmetic with the noise values given instead of drawn; used to
// replay a recorded pass under perturbed parameters.
std::array<double, 3> routing_scores_replay(const double* x, std::size_t dim,
                                            const DenseMatrix& w_clean,
                                            const std::array<double, 3>& b_clean,
                                            const DenseMatrix& w_noise,
                                            const std::array<double, 3>& b_noise,
                                            const std::array<double, 3>& noise);

// Softmax + descending sort + minimal-prefix threshold rule. tau = 0 selects
// exactly one expert.
RoutingDecision select_experts(const std::array<double, 3>& psi, double tau, std::size_t node = 0);

// Keeps the ego neighbors whose group label is covered by the selected
// experts; order and weights preserved.
EgoGraph filter_edges(const EgoGraph& ego, const GroupAssignment& groups,
                      const RoutingDecision& decision);

// Per row, the min(k, available) highest-weight filtered neighbors, id
// tie-break. Rows with no surviving neighbor stay empty.
FilteredAdjacency assemble_adjacency(const std::vector<EgoGraph>& filtered, std::size_t k);

}  // namespace xcpd

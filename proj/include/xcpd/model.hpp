#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "xcpd/gnn.hpp"
#include "xcpd/graph.hpp"
#include "xcpd/linalg.hpp"
#include "xcpd/rng.hpp"
#include "xcpd/routing.hpp"
#include "xcpd/spectral.hpp"

namespace xcpd {

// Everything needed to size and run the plugin. Band boundaries of zero mean
// the equal-thirds default (tau1 = n/3, tau2 = 2n/3).
struct PluginConfig {
    std::size_t channels = 8;
    std::size_t horizon = 24;
    std::size_t patch_len = 6;
    std::size_t embed_dim = 16;
    std::size_t gnn_layers = 2;
    double knn_alpha = 0.5;
    double router_tau = 0.5;
    double noise_eps = 0.1;
    double temperature = 5.0;
    double band_tau1 = 0.0;
    double band_tau2 = 0.0;
    double mu = 0.01;
    double beta = 0.01;
    double delta_stab = 1e-8;

    std::size_t patch_count() const { return (horizon + patch_len - 1) / patch_len; }
    std::size_t node_count() const { return channels * patch_count(); }
    void validate() const;
    // Effective boundaries for n frequencies.
    std::pair<double, double> band_taus() const;
};

// Every trainable tensor. Corrections (gnn weights, projections, linear path,
// gates) start at zero so the freshly initialized plugin is the identity map
// on the backbone prediction.
struct PluginParameters {
    DenseMatrix embed_w;                  // P x d
    std::vector<double> embed_b;          // d
    DenseMatrix router_clean_w;           // d x 3
    std::array<double, 3> router_clean_b{};
    DenseMatrix router_noise_w;           // d x 3
    std::array<double, 3> router_noise_b{};
    std::vector<GnnLayerParams> gnn;      // L layers, d x d each
    DenseMatrix node_proj_w;              // d x P
    std::vector<double> node_proj_b;      // P
    DenseMatrix time_proj_w;              // T' x T'
    std::vector<double> time_proj_b;      // T'
    DenseMatrix lin_path_w;               // T' x T'
    std::vector<double> lin_path_b;       // T'
    std::vector<double> gate_gnn;         // C
    std::vector<double> gate_lin;         // C
};

// All intermediates of one forward pass. Doubles as the recorded graph the
// backward pass replays; the discrete pieces (groups, ego topology, expert
// sets, noise draws) are frozen here.
struct ForwardTrace {
    PatchGrid grid;
    DenseMatrix backbone;        // C x T' input
    DenseMatrix patches;         // n x P
    DenseMatrix embeddings;      // n x d
    DenseMatrix spectral;        // n x d
    DenseMatrix energy;          // n x n
    BandPartition bands;
    GroupAssignment groups;
    std::vector<EgoGraph> ego;
    DenseMatrix routing_probs;   // n x 3 (the R matrix)
    DenseMatrix routing_noise;   // n x 3 eta draws (zero at evaluation)
    std::vector<RoutingDecision> decisions;
    FilteredAdjacency adjacency;
    std::vector<DenseMatrix> states;    // h^0 .. h^L, n x d each
    DenseMatrix node_out;        // n x P projected states
    DenseMatrix grid_out;        // C x T' re-assembled node outputs
    DenseMatrix delta_gnn;       // C x T'
    DenseMatrix delta_lin;       // C x T'
    DenseMatrix prediction;      // C x T'
};

// Runs the full pipeline on one backbone prediction. Precondition: the basis
// was fitted on graphs of the same node count.
ForwardTrace forward(const DenseMatrix& backbone_pred, const PluginParameters& params,
                     const PluginConfig& config, const SharedBasis& basis, bool training,
                     Rng& rng);

// Same pipeline with the discrete structure (and noise) replayed from a
// previous trace instead of recomputed. This is the function the
// finite-difference oracle perturbs: the topology stays frozen while the
// continuous paths move.
ForwardTrace forward_frozen(const DenseMatrix& backbone_pred, const PluginParameters& params,
                            const PluginConfig& config, const SharedBasis& basis,
                            const ForwardTrace& structure);

// Time-averaged, channel-summed squared error.
double loss_mse(const DenseMatrix& pred, const DenseMatrix& truth);

// Mean negative entropy surrogate of the routing rows.
double loss_entropy(const DenseMatrix& routing_probs, double delta);

// Mean dispersion of the routing rows: population std over mean.
double loss_balance(const DenseMatrix& routing_probs, double delta);

double total_loss(const ForwardTrace& trace, const DenseMatrix& truth,
                  const PluginConfig& config);

// All tensors allocated at the right shapes, every entry zero.
PluginParameters zero_params(const PluginConfig& config);

// Embedding and router weights uniform(-1/sqrt(d), 1/sqrt(d)); every
// correction tensor zero. Deterministic in the rng state.
PluginParameters init_params(const PluginConfig& config, Rng& rng);

// Checkpoint file: versioned binary record of the config, the shared basis
// and every parameter tensor. Write-then-read round-trips bitwise.
struct Checkpoint {
    PluginConfig config;
    PluginParameters params;
    SharedBasis basis;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Fixed traversal order over every parameter tensor, shared by the gradient
// tape, the optimizer moments and the checkpoint format. Each tensor appears
// exactly once.
std::size_t param_count(const PluginConfig& config);
void flatten_params(const PluginParameters& params, std::vector<double>& out);
void unflatten_params(const std::vector<double>& flat, const PluginConfig& config,
                      PluginParameters& params);

}  // namespace xcpd

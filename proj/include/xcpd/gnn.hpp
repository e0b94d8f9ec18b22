#pragma once

#include <cstddef>
#include <vector>

#include "xcpd/graph.hpp"
#include "xcpd/linalg.hpp"
#include "xcpd/routing.hpp"

namespace xcpd {

struct GnnLayerParams {
    DenseMatrix w_self;        // d x d
    DenseMatrix w_neigh;       // d x d
    std::vector<double> bias;  // d
};

struct NodeStates {
    int layer = 0;
    DenseMatrix values;  // n x d
};

// One round of message passing. Neighbor messages are the convex combination
// of neighbor states under shift-rescaled similarity weights (w+1)/2; a row
// with no neighbors (or all-zero shifted weights) contributes a zero message.
// Update: relu(h W_self + m W_neigh + bias).
NodeStates propagate_layer(const NodeStates& states, const FilteredAdjacency& adj,
                           const GnnLayerParams& params);

NodeStates propagate(const NodeStates& states, const FilteredAdjacency& adj,
                     const std::vector<GnnLayerParams>& layers);

// Maps each node state d -> patch_len and writes the result back onto the
// channels x horizon grid; zero-padded tail positions are dropped.
DenseMatrix project_to_time(const NodeStates& states, const DenseMatrix& proj_w,
                            const std::vector<double>& proj_b, const PatchGrid& grid);

// Aggregation weight actually used for a stored similarity.
inline double aggregation_weight(double similarity) { return (similarity + 1.0) * 0.5; }

// Convex neighbor combination per row; zero rows give zero messages. Shared
// by the forward layer and the reverse pass.
DenseMatrix neighbor_messages(const DenseMatrix& states, const FilteredAdjacency& adj);

}  // namespace xcpd

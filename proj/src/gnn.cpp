#include "xcpd/gnn.hpp"

#include <algorithm>

#include "xcpd/errors.hpp"

namespace xcpd {

DenseMatrix neighbor_messages(const DenseMatrix& states, const FilteredAdjacency& adj) {
    const std::size_t n = states.rows();
    const std::size_t d = states.cols();
    DenseMatrix messages(n, d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (const auto& [j, sim] : adj.rows[i]) total += aggregation_weight(sim);
        if (total <= 0.0) continue;
        double* msg = messages.row_ptr(i);
        for (const auto& [j, sim] : adj.rows[i]) {
            const double w = aggregation_weight(sim) / total;
            const double* hj = states.row_ptr(j);
            for (std::size_t c = 0; c < d; ++c) msg[c] += w * hj[c];
        }
    }
    return messages;
}

NodeStates propagate_layer(const NodeStates& states, const FilteredAdjacency& adj,
                           const GnnLayerParams& params) {
    const std::size_t n = states.values.rows();
    const std::size_t d = states.values.cols();
    if (adj.size != n) throw DimensionError("propagate_layer: adjacency size differs");
    if (params.w_self.rows() != d || params.w_self.cols() != d || params.w_neigh.rows() != d ||
        params.w_neigh.cols() != d || params.bias.size() != d)
        throw DimensionError("propagate_layer: parameter shapes differ from state dimension");

    const DenseMatrix messages = neighbor_messages(states.values, adj);
    NodeStates out;
    out.layer = states.layer + 1;
    out.values = matmul(states.values, params.w_self);
    const DenseMatrix neigh = matmul(messages, params.w_neigh);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) {
            double z = out.values(i, c) + neigh(i, c) + params.bias[c];
            out.values(i, c) = z > 0.0 ? z : 0.0;
        }
    return out;
}

NodeStates propagate(const NodeStates& states, const FilteredAdjacency& adj,
                     const std::vector<GnnLayerParams>& layers) {
    if (layers.empty()) throw ConfigError("propagate: at least one layer required");
    NodeStates current = states;
    for (const GnnLayerParams& layer : layers) current = propagate_layer(current, adj, layer);
    return current;
}

DenseMatrix project_to_time(const NodeStates& states, const DenseMatrix& proj_w,
                            const std::vector<double>& proj_b, const PatchGrid& grid) {
    const std::size_t n = states.values.rows();
    if (n != grid.node_count()) throw DimensionError("project_to_time: states do not match grid");
    if (proj_w.rows() != states.values.cols() || proj_w.cols() != grid.patch_len ||
        proj_b.size() != grid.patch_len)
        throw DimensionError("project_to_time: projection shapes differ");

    DenseMatrix per_node = matmul(states.values, proj_w);
    DenseMatrix out(grid.channels, grid.horizon, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = grid.node_channel(i);
        const std::size_t p = grid.node_patch(i);
        for (std::size_t r = 0; r < grid.patch_len; ++r) {
            const std::size_t t = p * grid.patch_len + r;
            if (t < grid.horizon) out(c, t) = per_node(i, r) + proj_b[r];
        }
    }
    return out;
}

}  // namespace xcpd

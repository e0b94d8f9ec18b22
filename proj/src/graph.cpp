#include "xcpd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xcpd/errors.hpp"

namespace xcpd {

PatchResult patch(const DenseMatrix& prediction, std::size_t patch_len) {
    const std::size_t channels = prediction.rows();
    const std::size_t horizon = prediction.cols();
    if (patch_len == 0 || horizon == 0) throw ConfigError("patch: sizes must be positive");
    if (patch_len > horizon) throw ConfigError("patch: patch length exceeds horizon");

    PatchResult out;
    out.grid.channels = channels;
    out.grid.horizon = horizon;
    out.grid.patch_len = patch_len;
    out.grid.patch_count = (horizon + patch_len - 1) / patch_len;
    out.patches = DenseMatrix(out.grid.node_count(), patch_len, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t p = 0; p < out.grid.patch_count; ++p) {
            const std::size_t row = out.grid.node_index(c, p);
            for (std::size_t r = 0; r < patch_len; ++r) {
                const std::size_t t = p * patch_len + r;
                if (t < horizon) out.patches(row, r) = prediction(c, t);
            }
        }
    }
    return out;
}

DenseMatrix unpatch(const DenseMatrix& patches, const PatchGrid& grid) {
    if (patches.rows() != grid.node_count() || patches.cols() != grid.patch_len)
        throw DimensionError("unpatch: patches do not match grid");
    DenseMatrix out(grid.channels, grid.horizon, 0.0);
    for (std::size_t c = 0; c < grid.channels; ++c)
        for (std::size_t p = 0; p < grid.patch_count; ++p)
            for (std::size_t r = 0; r < grid.patch_len; ++r) {
                const std::size_t t = p * grid.patch_len + r;
                if (t < grid.horizon) out(c, t) = patches(grid.node_index(c, p), r);
            }
    return out;
}

DenseMatrix embed(const DenseMatrix& patches, const DenseMatrix& weights,
                  const std::vector<double>& bias) {
    if (patches.cols() != weights.rows() || bias.size() != weights.cols())
        throw DimensionError("embed: shape mismatch");
    DenseMatrix out = matmul(patches, weights);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias[j];
    return out;
}

AdjacencyMatrix cosine_adjacency(const DenseMatrix& emb) {
    const std::size_t n = emb.rows();
    const std::size_t d = emb.cols();
    std::vector<double> norms(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        const double* row = emb.row_ptr(i);
        for (std::size_t j = 0; j < d; ++j) s += row[j] * row[j];
        norms[i] = std::sqrt(s);
    }

    AdjacencyMatrix out;
    out.kind = AdjacencyKind::RawCosine;
    out.values = DenseMatrix(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        out.values(i, i) = 1.0;
        if (norms[i] <= 1e-12) continue;  // isolated node, off-diagonals stay 0
        const double* xi = emb.row_ptr(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            if (norms[j] <= 1e-12) continue;
            const double* xj = emb.row_ptr(j);
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += xi[k] * xj[k];
            double cosv = dot / (norms[i] * norms[j]);
            cosv = std::clamp(cosv, -1.0, 1.0);
            out.values(i, j) = cosv;
            out.values(j, i) = cosv;
        }
    }
    return out;
}

AdjacencyMatrix nonneg_shift(const AdjacencyMatrix& a) {
    if (a.kind != AdjacencyKind::RawCosine)
        throw UsageError("nonneg_shift: input must be a raw cosine adjacency");
    AdjacencyMatrix out;
    out.kind = AdjacencyKind::ShiftedNonnegative;
    out.values = a.values;
    for (double& v : out.values.values()) v = (v + 1.0) * 0.5;
    return out;
}

LaplacianMatrix normalized_laplacian(const AdjacencyMatrix& a) {
    if (a.kind != AdjacencyKind::ShiftedNonnegative)
        throw UsageError("normalized_laplacian: input must be shifted-nonnegative");
    const std::size_t n = a.values.rows();
    std::vector<double> inv_sqrt_deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 0.0;
        for (std::size_t j = 0; j < n; ++j) deg += a.values(i, j);
        inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);  // deg >= 1 from the unit diagonal
    }
    LaplacianMatrix out;
    out.values = DenseMatrix(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j)
            out.values(i, j) = -inv_sqrt_deg[i] * a.values(i, j) * inv_sqrt_deg[j];
        out.values(i, i) += 1.0;
    }
    // Exact symmetry despite rounding in the two scalings.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (out.values(i, j) + out.values(j, i));
            out.values(i, j) = v;
            out.values(j, i) = v;
        }
    return out;
}

std::vector<EgoGraph> knn_sparsify(const AdjacencyMatrix& a, double alpha) {
    if (a.kind != AdjacencyKind::RawCosine)
        throw UsageError("knn_sparsify: ranking uses the raw cosine adjacency");
    if (alpha <= 0.0 || alpha > 1.0) throw ConfigError("knn_sparsify: alpha must be in (0, 1]");
    const std::size_t n = a.values.rows();
    std::size_t k = static_cast<std::size_t>(alpha * static_cast<double>(n));
    if (n > 0 && k > n - 1) k = n - 1;

    std::vector<EgoGraph> egos(n);
    std::vector<std::size_t> candidates(n > 0 ? n - 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
        EgoGraph& ego = egos[i];
        ego.center = i;
        std::size_t m = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) candidates[m++] = j;
        const auto better = [&](std::size_t x, std::size_t y) {
            if (a.values(i, x) != a.values(i, y)) return a.values(i, x) > a.values(i, y);
            return x < y;
        };
        const std::size_t keep = std::min(k, m);
        std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.begin() + m,
                          better);
        ego.neighbor_ids.assign(candidates.begin(), candidates.begin() + keep);
        ego.weights.resize(keep);
        for (std::size_t j = 0; j < keep; ++j) ego.weights[j] = a.values(i, ego.neighbor_ids[j]);
    }
    return egos;
}

}  // namespace xcpd

#pragma once

#include <cstddef>
#include <vector>

#include "xcpd/linalg.hpp"

namespace xcpd {

// Index bookkeeping for the channel-patch node grid. Node ids enumerate
// patches channel-major: node(c, p) = c * patch_count + p.
struct PatchGrid {
    std::size_t channels = 0;
    std::size_t horizon = 0;
    std::size_t patch_len = 0;
    std::size_t patch_count = 0;

    std::size_t node_count() const { return channels * patch_count; }
    std::size_t node_index(std::size_t c, std::size_t p) const { return c * patch_count + p; }
    std::size_t node_channel(std::size_t i) const { return i / patch_count; }
    std::size_t node_patch(std::size_t i) const { return i % patch_count; }
};

struct PatchResult {
    PatchGrid grid;
    DenseMatrix patches;  // node_count x patch_len, tail zero-padded
};

enum class AdjacencyKind { RawCosine, ShiftedNonnegative };

struct AdjacencyMatrix {
    DenseMatrix values;
    AdjacencyKind kind = AdjacencyKind::RawCosine;
};

struct LaplacianMatrix {
    DenseMatrix values;
};

// Neighborhood of one center node: ids sorted by descending similarity,
// ties broken toward the smaller id. The center itself is excluded.
struct EgoGraph {
    std::size_t center = 0;
    std::vector<std::size_t> neighbor_ids;
    std::vector<double> weights;
};

// Cuts a channels x horizon prediction into contiguous non-overlapping
// patches of length patch_len, zero-padding the final patch when needed.
PatchResult patch(const DenseMatrix& prediction, std::size_t patch_len);

// Inverse of patch on the un-padded region.
DenseMatrix unpatch(const DenseMatrix& patches, const PatchGrid& grid);

// Linear patch embedding: patches * weights + bias per row.
DenseMatrix embed(const DenseMatrix& patches, const DenseMatrix& weights,
                  const std::vector<double>& bias);

// Pairwise cosine similarities between embedding rows. Diagonal is exactly 1;
// zero-norm rows become isolated (off-diagonal 0) instead of raising.
AdjacencyMatrix cosine_adjacency(const DenseMatrix& emb);

// Entrywise (A + 1) / 2, mapping cosine range [-1, 1] onto [0, 1] so degrees
// stay positive and the normalized Laplacian spectrum stays in [0, 2].
AdjacencyMatrix nonneg_shift(const AdjacencyMatrix& a);

// L = I - D^{-1/2} A D^{-1/2} over a shifted-nonnegative adjacency.
LaplacianMatrix normalized_laplacian(const AdjacencyMatrix& a);

// Per-center k-NN neighborhoods on the raw cosine adjacency, k = floor(alpha*n)
// capped at n-1. Rank-based: any strictly monotone rescaling of a similarity
// row selects the same neighbor set.
std::vector<EgoGraph> knn_sparsify(const AdjacencyMatrix& a, double alpha);

}  // namespace xcpd

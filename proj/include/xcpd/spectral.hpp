#pragma once

#include <cstddef>
#include <vector>

#include "xcpd/graph.hpp"
#include "xcpd/linalg.hpp"

namespace xcpd {

// Shared spectral basis: the eigenbasis of the mean Laplacian over a set of
// training-window graphs, column-ordered by ascending eigenvalue. Fitted once
// and frozen; every window is transformed into this one spectral domain.
struct SharedBasis {
    DenseMatrix basis;               // n x n orthonormal, columns = frequencies
    std::vector<double> eigenvalues; // ascending
    double eigengap = 0.0;           // min gap between adjacent distinct eigenvalues
    DenseMatrix mean_laplacian;

    std::size_t size() const { return basis.rows(); }
};

struct BasisBoundReport {
    double lhs = 0.0;     // ||U_t - U R_t||_F with the Procrustes-optimal R_t
    double rhs = 0.0;     // (sqrt(2) / eigengap) * ||L_t - L_mean||_F
    bool holds = false;
    bool vacuous = false; // eigengap too small for the bound to say anything
};

// Soft low/mid/high membership of each frequency index. Membership rows sum
// to one; low is non-increasing and high non-decreasing across frequencies.
struct BandPartition {
    double tau1 = 0.0;
    double tau2 = 0.0;
    double temperature = 0.0;
    DenseMatrix memberships;  // n x 3, columns (low, mid, high)
};

enum Band : int { kBandLow = 0, kBandMid = 1, kBandHigh = 2 };

// Per-node dominant band, argmax of the band-softmax with ties resolved
// toward the lower band index.
struct GroupAssignment {
    std::vector<int> labels;
    DenseMatrix scores;  // n x 3 softmax scores
};

// Eigendecomposition of the entrywise mean of the given Laplacians.
SharedBasis fit_shared_basis(const std::vector<LaplacianMatrix>& laplacians);

// Checks the subspace perturbation bound of the shared basis against one
// window Laplacian (Davis-Kahan with constant sqrt(2)/eigengap). Reported as
// vacuous, never as a failure, when the eigengap is below 1e-6.
BasisBoundReport verify_basis_bound(const SharedBasis& basis, const LaplacianMatrix& lap);

// Graph Fourier transform U^T * emb. Norm-preserving.
DenseMatrix gft(const SharedBasis& basis, const DenseMatrix& emb);

// Energy of node i at frequency j: U_ij^2 * ||spectral row j||^2, row-scaled
// so the responses of each node sum exactly to its squared embedding norm.
DenseMatrix energy_response(const SharedBasis& basis, const DenseMatrix& spectral);

// Memberships from the two sigmoid boundaries at temperature m, frequency
// indices j = 1..n. Any negative mid weight is clamped to zero and the triple
// renormalized (cannot trigger for tau1 < tau2, kept as a guard).
BandPartition band_memberships(double tau1, double tau2, double temperature, std::size_t n);

GroupAssignment group_nodes(const DenseMatrix& energy, const BandPartition& bands);

namespace testhooks {
// Negative control for the verification suite: flips the sign of the first
// frequency column inside energy_response, which must break the energy
// conservation check. Never set outside tests.
extern bool flip_energy_sign;
}  // namespace testhooks

}  // namespace xcpd

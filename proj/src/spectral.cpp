#include "xcpd/spectral.hpp"

#include <algorithm>
#include <cmath>

#include "xcpd/errors.hpp"

namespace xcpd {

namespace testhooks {
bool flip_energy_sign = false;
}

SharedBasis fit_shared_basis(const std::vector<LaplacianMatrix>& laplacians) {
    if (laplacians.empty()) throw ConfigError("fit_shared_basis: no Laplacians given");
    const std::size_t n = laplacians.front().values.rows();
    DenseMatrix mean(n, n, 0.0);
    for (const LaplacianMatrix& lap : laplacians) {
        if (lap.values.rows() != n || lap.values.cols() != n)
            throw DimensionError("fit_shared_basis: Laplacian sizes differ");
        mean = add(mean, lap.values);
    }
    scale_inplace(mean, 1.0 / static_cast<double>(laplacians.size()));

    const EigenDecomposition eig = jacobi_eigh(mean, 1e-12);
    SharedBasis out;
    out.basis = eig.eigenvectors;
    out.eigenvalues = eig.eigenvalues;
    out.mean_laplacian = mean;
    out.eigengap = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double gap = out.eigenvalues[i + 1] - out.eigenvalues[i];
        if (gap > 1e-9 && (out.eigengap == 0.0 || gap < out.eigengap)) out.eigengap = gap;
    }
    return out;
}

BasisBoundReport verify_basis_bound(const SharedBasis& basis, const LaplacianMatrix& lap) {
    BasisBoundReport report;
    if (basis.eigengap <= 1e-6) {
        report.vacuous = true;
        report.holds = true;
        return report;
    }
    if (lap.values.rows() != basis.size() || lap.values.cols() != basis.size())
        throw DimensionError("verify_basis_bound: Laplacian size differs from basis");

    const EigenDecomposition eig = jacobi_eigh(lap.values, 1e-12);
    const DenseMatrix rotation = procrustes_align(basis.basis, eig.eigenvectors);
    const DenseMatrix aligned = matmul(basis.basis, rotation);
    report.lhs = frobenius_norm(subtract(eig.eigenvectors, aligned));
    report.rhs = std::sqrt(2.0) / basis.eigengap *
                 frobenius_norm(subtract(lap.values, basis.mean_laplacian));
    report.holds = report.lhs <= report.rhs + 1e-9;
    return report;
}

DenseMatrix gft(const SharedBasis& basis, const DenseMatrix& emb) {
    if (emb.rows() != basis.size()) throw DimensionError("gft: embedding rows differ from basis");
    return matmul(transpose(basis.basis), emb);
}

DenseMatrix energy_response(const SharedBasis& basis, const DenseMatrix& spectral) {
    const std::size_t n = basis.size();
    if (spectral.rows() != n) throw DimensionError("energy_response: spectral rows differ");
    std::vector<double> row_sq(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        const double* row = spectral.row_ptr(j);
        for (std::size_t c = 0; c < spectral.cols(); ++c) s += row[c] * row[c];
        row_sq[j] = s;
    }

    // The raw responses U_ij^2 * ||spc_j||^2 conserve energy only in
    // aggregate: per node, the cross terms of the reconstruction
    // x_i = sum_j U_ij spc_j do not cancel. Each row is rescaled onto the
    // node's actual squared norm, which keeps the relative frequency profile
    // (and the grouping argmax) intact while making conservation exact.
    const DenseMatrix recon = matmul(basis.basis, spectral);
    DenseMatrix energy(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double raw_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double u = basis.basis(i, j);
            energy(i, j) = u * u * row_sq[j];
            raw_sum += energy(i, j);
        }
        double norm_sq = 0.0;
        const double* row = recon.row_ptr(i);
        for (std::size_t c = 0; c < recon.cols(); ++c) norm_sq += row[c] * row[c];
        if (raw_sum > 0.0) {
            const double scale = norm_sq / raw_sum;
            for (std::size_t j = 0; j < n; ++j) energy(i, j) *= scale;
        }
        if (testhooks::flip_energy_sign) energy(i, 0) = -energy(i, 0);
    }
    return energy;
}

namespace {
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}

BandPartition band_memberships(double tau1, double tau2, double temperature, std::size_t n) {
    if (!(tau1 < tau2)) throw ConfigError("band_memberships: tau1 must be below tau2");
    if (temperature <= 0.0) throw ConfigError("band_memberships: temperature must be positive");

    BandPartition out;
    out.tau1 = tau1;
    out.tau2 = tau2;
    out.temperature = temperature;
    out.memberships = DenseMatrix(n, 3);
    for (std::size_t idx = 0; idx < n; ++idx) {
        const double j = static_cast<double>(idx + 1);  // frequencies are 1-based
        double low = sigmoid(temperature * (tau1 - j));
        double high = sigmoid(temperature * (j - tau2));
        double mid = 1.0 - low - high;
        if (mid < 0.0) {
            mid = 0.0;
            const double s = low + high;
            low /= s;
            high /= s;
        }
        out.memberships(idx, kBandLow) = low;
        out.memberships(idx, kBandMid) = mid;
        out.memberships(idx, kBandHigh) = high;
    }
    return out;
}

GroupAssignment group_nodes(const DenseMatrix& energy, const BandPartition& bands) {
    const std::size_t n = energy.rows();
    if (bands.memberships.rows() != energy.cols())
        throw DimensionError("group_nodes: memberships do not match energy columns");

    GroupAssignment out;
    out.labels.resize(n);
    out.scores = DenseMatrix(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
        double sums[3] = {0.0, 0.0, 0.0};
        for (std::size_t j = 0; j < energy.cols(); ++j) {
            const double e = energy(i, j);
            sums[0] += bands.memberships(j, kBandLow) * e;
            sums[1] += bands.memberships(j, kBandMid) * e;
            sums[2] += bands.memberships(j, kBandHigh) * e;
        }
        // Max-shifted softmax: energies scale with squared norms and would
        // overflow exp otherwise.
        const double m = std::max({sums[0], sums[1], sums[2]});
        double z = 0.0;
        double exps[3];
        for (int b = 0; b < 3; ++b) {
            exps[b] = std::exp(sums[b] - m);
            z += exps[b];
        }
        int label = 0;
        for (int b = 0; b < 3; ++b) {
            out.scores(i, b) = exps[b] / z;
            if (sums[b] > sums[label]) label = b;  // strict: ties keep the lower band
        }
        out.labels[i] = label;
    }
    return out;
}

}  // namespace xcpd

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xcpd::verify {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::size_t trials = 0;
    std::string detail;
};

// Energy conservation of the spectral response over random instances.
CheckResult check_parseval(std::size_t instances, std::uint64_t seed);

// Normalized-Laplacian eigenvalues stay within [0, 2] over random graphs.
CheckResult check_laplacian_range(std::size_t instances, std::uint64_t seed);

// Shared-basis perturbation bound over randomized window ensembles with a
// usable eigengap, plus the vacuous-report path on a degenerate spectrum.
CheckResult check_basis_bound(std::size_t trials, std::uint64_t seed);

// Exhaustive minimal-prefix and monotonicity audit of the expert selector.
CheckResult check_minimal_prefix();

// Closed-form values of the routing regularizers.
CheckResult check_loss_closed_forms();

// Residual identity at zero init and gate-saturation degradation.
CheckResult check_residual_identity(std::uint64_t seed);

// Hand-computed metric fixtures, including the self-normalized OWA.
CheckResult check_metrics_oracle();

// patch/unpatch round trip over random shapes.
CheckResult check_patch_roundtrip(std::size_t instances, std::uint64_t seed);

// Neighbor selection is rank-based: monotone similarity transforms keep it.
CheckResult check_knn_rank_invariance(std::size_t instances, std::uint64_t seed);

// Analytic gradients against central finite differences at tiny scale.
CheckResult check_gradients(std::size_t seeds, std::uint64_t seed0);

// The full desk-scale suite. `inject_fault` may name a supported negative
// control ("energy-sign") that must make the energy conservation check fail.
std::vector<CheckResult> run_all(const std::string& inject_fault = "");

}  // namespace xcpd::verify

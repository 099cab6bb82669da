#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "crispe/linalg.hpp"

namespace crispe {

/// One invariant check. Passes when lower <= observed <= upper.
struct CheckResult {
    std::string name;
    double observed = 0.0;
    double lower = -std::numeric_limits<double>::infinity();
    double upper = 0.0;
    bool passed = false;
    std::string detail;
};

struct VerifyReport {
    std::vector<CheckResult> checks;

    bool passed() const;
    std::size_t failures() const;
    /// One line per check: "PASS|FAIL name observed=... bound=...".
    std::string format() const;
};

/// Signature of the matrix-free projector formula; swappable so a broken
/// implementation can be injected into the equivalence check.
using KronApply = std::function<Matrix(const Matrix& u_out, const Matrix& u_in, const Matrix& mask, const Matrix& q)>;

struct VerifyOptions {
    std::uint64_t seed = 20240611;
    /// Replaces the upper bound of every tolerance-type check.
    std::optional<double> tolerance;
    KronApply kron_apply; ///< empty = the library formula
};

VerifyReport verify(const VerifyOptions& options = {});

// Individual checks, shared with the acceptance suite.

/// Matrix-free projection vs the materialised (U_in (x) U_out) diag(vec M) (.)^T.
CheckResult check_kron_equivalence(std::uint64_t seed, int trials, double tol, const KronApply& apply = {});

/// Exact layerwise GNH annihilates updates that kill every capability input.
CheckResult check_nullspace_containment(std::uint64_t seed, int trials, double tol);

/// Bregman divergence vs 1/2 t^2 d^T G d: gap at t = 1e-3 and the decay ratio
/// gap(1e-2) / gap(1e-3).
std::vector<CheckResult> check_bregman_quadratic(std::uint64_t seed, int pairs, double gap_tol, double min_ratio);

struct FisherRateConfig {
    std::size_t n_small = 100000;
    std::size_t replicates = 8;
    double error_tol = 5e-2;
    double ratio_lo = 0.35;
    double ratio_hi = 0.65;
};

/// Monte-Carlo Fisher from sampled-label pseudo-gradients vs the exact GNH at
/// N and 4N draws; RMS error over independent replicate streams.
std::vector<CheckResult> check_fisher_rate(std::uint64_t seed, const FisherRateConfig& config);

/// One example, one label draw: A (x) S equals the rank-one Fisher block.
CheckResult check_kfac_single_sample(std::uint64_t seed, double tol);

/// Backprop vs central differences of the loss.
CheckResult check_gradient_fd(std::uint64_t seed, int triples, double tol);

/// HVP columns vs an explicit Hessian (analytic for a linear-softmax layer,
/// second differences of the loss for a small tanh net).
CheckResult check_hvp_columns(std::uint64_t seed, double tol);

/// Fixed exact-GNH dense projector, SGD: Delta^T G Delta <= lambda_gamma ||Delta||^2
/// at every step. `slack` is relative to sigma_max(G) ||Delta||^2.
CheckResult check_constraint_bound(std::uint64_t seed, std::size_t epochs, double gamma, double slack);

} // namespace crispe

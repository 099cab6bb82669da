#pragma once

#include <cstddef>
#include <limits>
#include <span>

#include <Eigen/Dense>

namespace crispe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

/// Relative clamp applied to tiny negative eigenvalues of PSD inputs.
inline constexpr double kEigenClampTol = 1e-10;
/// Relative asymmetry ||M - M^T||_F / ||M||_F accepted by sym_eig.
inline constexpr double kSymmetryTol = 1e-8;
/// Cutoff reported when every direction is retained (nothing is projected through).
inline constexpr double kNoNullspace = -std::numeric_limits<double>::infinity();

/// Eigendecomposition of a symmetric matrix. Columns of `vectors` are
/// orthonormal eigenvectors; `values` is non-increasing.
struct SymEig {
    Matrix vectors;
    Vector values;
};

SymEig sym_eig(const Matrix& m);

/// Smallest r with sum(lambda[0..r)) / sum(lambda) >= gamma. Eigenvalues tied
/// with the last retained one are retained too. Zero total energy gives 0.
std::size_t energy_cutoff_index(std::span<const double> lambda, double gamma);

inline std::size_t energy_cutoff_index(const Vector& lambda, double gamma) {
    return energy_cutoff_index(std::span<const double>(lambda.data(), static_cast<std::size_t>(lambda.size())), gamma);
}

/// U_{>k} U_{>k}^T: orthogonal projector onto the eigenvectors past index k.
Matrix dense_projector(const SymEig& eig, std::size_t k);

/// Pairwise product spectrum of a Kronecker factorisation. Entry (i, j) of the
/// grid is lambda_out[i] * lambda_in[j].
struct KronSpectrum {
    Vector lambda_out;
    Vector lambda_in;

    double product(Eigen::Index i, Eigen::Index j) const { return lambda_out[i] * lambda_in[j]; }
    Matrix grid() const { return lambda_out * lambda_in.transpose(); }
};

/// Result of applying the gamma-energy rule to a 2-D spectrum grid.
struct GridCutoff {
    double lambda_gamma = kNoNullspace; ///< largest value left in the nullspace
    Matrix mask;                        ///< 1 where grid <= lambda_gamma
    std::size_t retained = 0;           ///< size of the high-curvature set
    double retained_energy = 0.0;
    double total_energy = 0.0;
};

/// gamma-energy cutoff over an arbitrary nonnegative grid (product grid or
/// corrected eigenvalues).
GridCutoff grid_energy_cutoff(const Matrix& grid, double gamma);

GridCutoff kron_energy_cutoff(const KronSpectrum& spectrum, double gamma);

/// Column-major vec / its inverse.
Vector vec(const Matrix& m);
Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols);

} // namespace linalg
} // namespace crispe

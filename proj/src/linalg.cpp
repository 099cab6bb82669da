#include "crispe/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "crispe/error.hpp"

namespace crispe {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Size: return "size";
    case ErrorKind::State: return "state";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

namespace linalg {

SymEig sym_eig(const Matrix& m) {
    require(m.rows() == m.cols(), ErrorKind::Dimension,
            "sym_eig: matrix is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ", not square");
    require(m.rows() >= 1, ErrorKind::Dimension, "sym_eig: empty matrix");

    const double norm = m.norm();
    const double asym = (m - m.transpose()).norm();
    require(asym <= kSymmetryTol * norm, ErrorKind::Validation,
            "sym_eig: relative asymmetry " + std::to_string(norm > 0 ? asym / norm : asym) + " exceeds tolerance");

    const Matrix sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
    if (solver.info() != Eigen::Success)
        fail(ErrorKind::Numerical, "sym_eig: eigensolver did not converge for dimension " + std::to_string(m.rows()));

    // Eigen returns ascending order; flip to descending.
    const Eigen::Index n = m.rows();
    SymEig out;
    out.values = solver.eigenvalues().reverse();
    out.vectors = solver.eigenvectors().rowwise().reverse();

    const double scale = out.values.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i)
        if (out.values[i] < 0.0 && -out.values[i] < kEigenClampTol * scale) out.values[i] = 0.0;
    return out;
}

std::size_t energy_cutoff_index(std::span<const double> lambda, double gamma) {
    require(gamma > 0.0 && gamma < 1.0, ErrorKind::Validation,
            "energy_cutoff_index: gamma must lie in (0, 1), got " + std::to_string(gamma));
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        require(lambda[i] >= 0.0, ErrorKind::Validation, "energy_cutoff_index: negative eigenvalue at index " + std::to_string(i));
        if (i > 0)
            require(lambda[i] <= lambda[i - 1], ErrorKind::Validation,
                    "energy_cutoff_index: spectrum not sorted descending at index " + std::to_string(i));
    }
    const double total = std::accumulate(lambda.begin(), lambda.end(), 0.0);
    if (total == 0.0) return 0;

    std::size_t k = lambda.size();
    double cumulative = 0.0;
    for (std::size_t r = 0; r < lambda.size(); ++r) {
        cumulative += lambda[r];
        if (cumulative / total >= gamma) {
            k = r + 1;
            break;
        }
    }
    // Conservative tie-break: anything as sharp as the last retained direction stays retained.
    while (k < lambda.size() && lambda[k] == lambda[k - 1]) ++k;
    return k;
}

Matrix dense_projector(const SymEig& eig, std::size_t k) {
    const auto p = static_cast<std::size_t>(eig.vectors.cols());
    require(k <= p, ErrorKind::Validation,
            "dense_projector: k = " + std::to_string(k) + " exceeds dimension " + std::to_string(p));
    if (k == 0) return Matrix::Identity(eig.vectors.rows(), eig.vectors.rows());
    const auto rest = static_cast<Eigen::Index>(p - k);
    const auto tail = eig.vectors.rightCols(rest);
    return tail * tail.transpose();
}

GridCutoff grid_energy_cutoff(const Matrix& grid, double gamma) {
    require(gamma > 0.0 && gamma < 1.0, ErrorKind::Validation,
            "gamma must lie in (0, 1), got " + std::to_string(gamma));
    GridCutoff out;
    out.mask = Matrix::Zero(grid.rows(), grid.cols());
    if (grid.size() == 0) return out;

    const double scale = grid.cwiseAbs().maxCoeff();
    Matrix clean = grid;
    for (Eigen::Index j = 0; j < clean.cols(); ++j) {
        for (Eigen::Index i = 0; i < clean.rows(); ++i) {
            double& v = clean(i, j);
            if (v < 0.0) {
                require(-v < kEigenClampTol * scale, ErrorKind::Validation,
                        "negative spectrum entry " + std::to_string(v) + " beyond clamping tolerance");
                v = 0.0;
            }
        }
    }

    std::vector<double> sorted(clean.data(), clean.data() + clean.size());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t k = energy_cutoff_index(std::span<const double>(sorted), gamma);

    out.retained = k;
    out.total_energy = std::accumulate(sorted.begin(), sorted.end(), 0.0);
    out.retained_energy = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), 0.0);
    out.lambda_gamma = k < sorted.size() ? sorted[k] : kNoNullspace;
    for (Eigen::Index j = 0; j < clean.cols(); ++j)
        for (Eigen::Index i = 0; i < clean.rows(); ++i)
            out.mask(i, j) = clean(i, j) <= out.lambda_gamma ? 1.0 : 0.0;
    return out;
}

GridCutoff kron_energy_cutoff(const KronSpectrum& spectrum, double gamma) {
    return grid_energy_cutoff(spectrum.grid(), gamma);
}

Vector vec(const Matrix& m) {
    return Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix unvec(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
    require(v.size() == rows * cols, ErrorKind::Dimension,
            "unvec: length " + std::to_string(v.size()) + " does not fit " + std::to_string(rows) + "x" + std::to_string(cols));
    return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

} // namespace linalg
} // namespace crispe

#pragma once

// Seeded generators shared by the unit tests.

#include <cmath>
#include <random>
#include <vector>

#include "crispe/network.hpp"

namespace crispe::testing {

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    return m;
}

inline Vector random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
    return random_matrix(rng, n, 1, scale).col(0);
}

inline Matrix random_symmetric(Rng& rng, Eigen::Index n) {
    const Matrix a = random_matrix(rng, n, n);
    return 0.5 * (a + a.transpose());
}

/// PSD with a spread spectrum: B B^T for a tall-ish random B.
inline Matrix random_psd(Rng& rng, Eigen::Index n, Eigen::Index rank = -1) {
    const Matrix b = random_matrix(rng, n, rank < 0 ? n : rank);
    return b * b.transpose();
}

inline int uniform_int(Rng& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Inputs uniform in [0, 1], labels uniform over the classes.
inline LabeledDataset random_dataset(Rng& rng, std::size_t n, Eigen::Index dim, int classes) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LabeledDataset d;
    d.class_count = classes;
    d.inputs.resize(static_cast<Eigen::Index>(n), dim);
    for (Eigen::Index j = 0; j < dim; ++j)
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) d.inputs(i, j) = u(rng);
    for (std::size_t i = 0; i < n; ++i) d.labels.push_back(uniform_int(rng, 0, classes - 1));
    return d;
}

inline LayerGradients random_like(Rng& rng, const FeedForwardNet& net) {
    LayerGradients g = net.zeros_like();
    for (auto& b : g.blocks) b = random_matrix(rng, b.rows(), b.cols());
    return g;
}

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

inline double rel_err(const Matrix& a, const Matrix& b) {
    const double denom = std::max(a.norm(), b.norm());
    return denom == 0.0 ? 0.0 : (a - b).norm() / denom;
}

inline bool bit_equal(const FeedForwardNet& a, const FeedForwardNet& b) {
    if (a.layer_count() != b.layer_count()) return false;
    for (std::size_t l = 0; l < a.layer_count(); ++l)
        if (a.layer(l).weights != b.layer(l).weights || a.layer(l).activation != b.layer(l).activation) return false;
    return true;
}

} // namespace crispe::testing

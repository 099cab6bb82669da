#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "crispe/curvature.hpp"
#include "crispe/linalg.hpp"
#include "crispe/network.hpp"

namespace crispe {

/// Explicit projector onto the gamma-approximate nullspace of a dense block.
struct DenseProjector {
    Matrix p;
};

/// Rotate-mask-rotate projector: Q -> U_out ((U_out^T Q U_in) .* M) U_in^T.
struct FactoredProjector {
    Matrix u_out;
    Matrix u_in;
    Vector lambda_out;
    Vector lambda_in;
    Matrix mask;
    bool passthrough = false; ///< mask is all ones
};

struct LayerProjector {
    LayerShape shape;
    std::variant<DenseProjector, FactoredProjector> op;
    double lambda_gamma = linalg::kNoNullspace;
    double retained_fraction = 0.0;
    std::size_t removed_rank = 0; ///< size of the retained (high-curvature) set
};

/// Single projector over the concatenation of every tracked layer.
struct JointProjector {
    std::vector<LayerShape> shapes;
    Matrix p;
    double lambda_gamma = linalg::kNoNullspace;
    double retained_fraction = 0.0;
    std::size_t removed_rank = 0;
};

struct ProjectorCache {
    double gamma = 0.0;
    CurvatureKind kind = CurvatureKind::Kfac;
    std::vector<LayerProjector> layers;
    std::optional<JointProjector> joint;
    std::chrono::system_clock::time_point built_at;

    const LayerProjector* find(std::size_t layer) const;
    bool tracks(std::size_t layer) const;
    std::vector<std::size_t> tracked_layers() const;
};

struct ProjectorOptions {
    /// Dense models only: one projector over all tracked parameters instead of
    /// per-layer blocks.
    bool joint = false;
};

ProjectorCache build_projector(const CurvatureModel& model, double gamma, const ProjectorOptions& options = {});

Matrix project_dense(const ProjectorCache& cache, std::size_t layer, const Matrix& q);
Matrix project_kron(const ProjectorCache& cache, std::size_t layer, const Matrix& q);

/// The matrix-free formula on its own, for callers holding bases and a mask.
Matrix rotate_mask_rotate(const Matrix& u_out, const Matrix& u_in, const Matrix& mask, const Matrix& q);

/// Project every tracked block of `g`; untracked blocks are zeroed.
LayerGradients project(const ProjectorCache& cache, const LayerGradients& g);

struct ResidualEnergy {
    double retained_fraction = 0.0;
    std::size_t removed_rank = 0;
};

ResidualEnergy residual_energy(const ProjectorCache& cache, std::size_t layer);

/// Largest curvature left in the nullspace across all tracked layers.
double max_lambda_gamma(const ProjectorCache& cache);

} // namespace crispe

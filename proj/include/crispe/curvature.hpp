#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "crispe/dataset.hpp"
#include "crispe/network.hpp"

namespace crispe {

enum class CurvatureKind { ExactHessian, Gnh, Kfac, Ekfac, ActivationCov };

const char* to_string(CurvatureKind kind) noexcept;
CurvatureKind parse_curvature_kind(const std::string& name);

inline constexpr Eigen::Index kExactHessianParamLimit = 5000;
inline constexpr Eigen::Index kGnhParamLimit = 20000;

struct LayerShape {
    std::size_t layer = 0;
    Eigen::Index d_out = 0;
    Eigen::Index d_in = 0; ///< includes the bias column
};

/// Per-layer K-FAC statistics. `a` is E[a a^T] over examples, `s` is E[g g^T]
/// over (example, label draw) pairs; both are averaged, and `sample_count`
/// weights them when streams are merged.
struct KfacLayerFactors {
    std::size_t layer = 0;
    Matrix a;
    Matrix s;
    std::uint64_t sample_count = 0;
};

struct KfacFactors {
    std::vector<KfacLayerFactors> layers;

    const KfacLayerFactors* find(std::size_t layer) const;
    std::uint64_t sample_count() const;
};

/// Eigenvalue correction in the Kronecker eigenbasis. `corrected(i, j)` is
/// E[(U_out^T g a^T U_in)_{ij}^2].
struct EkfacLayer {
    std::size_t layer = 0;
    Matrix u_out;
    Matrix u_in;
    Matrix corrected;
};

/// Dense curvature over the concatenated parameters of `shapes` (canonical order).
struct DenseCurvature {
    std::vector<LayerShape> shapes;
    Matrix matrix;
    std::uint64_t sample_count = 0;
};

struct ExactHessianModel {
    DenseCurvature dense;
    double asymmetry = 0.0; ///< ||H - H^T||_F / ||H||_F before symmetrisation
};
struct GnhModel {
    DenseCurvature dense;
};
struct KfacModel {
    KfacFactors factors;
};
struct EkfacModel {
    KfacFactors factors;
    std::vector<EkfacLayer> corrections;
};
/// Input-side covariance only; the output side is taken as identity.
struct ActivationCovModel {
    KfacFactors factors;
};

struct CurvatureModel {
    std::variant<ExactHessianModel, GnhModel, KfacModel, EkfacModel, ActivationCovModel> data;

    CurvatureKind kind() const;
    std::vector<std::size_t> layers() const;
    std::vector<LayerShape> shapes() const;
};

struct EstimateOptions {
    std::vector<std::size_t> layers; ///< empty = every layer
    std::size_t mc_samples = 1;
    std::uint64_t seed = 0;
    bool empirical_fisher = false;
    /// Global index of the first example; per-example label streams are
    /// derived from (seed, index_offset + i) so chunked estimates line up with
    /// one-shot ones.
    std::uint64_t index_offset = 0;
};

std::vector<std::size_t> resolve_layers(const FeedForwardNet& net, const std::vector<std::size_t>& layers);

CurvatureModel exact_hessian(const FeedForwardNet& net, const LabeledDataset& cap, const std::vector<std::size_t>& layers = {});
CurvatureModel exact_gnh(const FeedForwardNet& net, const LabeledDataset& cap, const std::vector<std::size_t>& layers = {});
KfacFactors kfac_factors(const FeedForwardNet& net, const LabeledDataset& cap, const EstimateOptions& options);
CurvatureModel kfac_estimate(const FeedForwardNet& net, const LabeledDataset& cap, const EstimateOptions& options);
CurvatureModel ekfac_correct(const FeedForwardNet& net, const LabeledDataset& cap, const KfacFactors& kfac,
                             const EstimateOptions& options);
CurvatureModel activation_covariance(const FeedForwardNet& net, const LabeledDataset& cap,
                                     const std::vector<std::size_t>& layers = {});

/// Build any curvature kind from capability data.
CurvatureModel estimate_curvature(CurvatureKind kind, const FeedForwardNet& net, const LabeledDataset& cap,
                                  const EstimateOptions& options);

/// Zero K-FAC model over `layers`: imposes no constraint.
CurvatureModel zero_curvature(const FeedForwardNet& net, const std::vector<std::size_t>& layers = {});

/// Sample-count-weighted streaming average.
KfacFactors aggregate_factors(const KfacFactors& acc, const KfacFactors& incoming);

struct BregmanReport {
    double value = 0.0;
    double quadratic_estimate = 0.0;
    double relative_gap = 0.0;
};

inline constexpr double kBregmanFloor = 1e-300;

/// Mean Bregman divergence of the cross-entropy over logits between two
/// parameter settings; `model` (when given) supplies 1/2 d^T C d.
BregmanReport bregman_divergence(const FeedForwardNet& net, const FeedForwardNet& net0, const LabeledDataset& data,
                                 const CurvatureModel* model = nullptr);

/// delta^T C delta with delta shaped like the network (untracked blocks ignored).
double quadratic_form(const CurvatureModel& model, const LayerGradients& delta);

} // namespace crispe

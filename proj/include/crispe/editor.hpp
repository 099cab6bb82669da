#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crispe/curvature.hpp"
#include "crispe/projection.hpp"

namespace crispe {

enum class OptimizerKind { Sgd, Adam };

const char* to_string(OptimizerKind kind) noexcept;
OptimizerKind parse_optimizer(const std::string& name);

/// Editing hyperparameters. The learning rate, step, batch size, early stopping
/// and chunk size defaults are the standard editing settings.
struct EditConfig {
    double gamma = 0.9;
    double learning_rate = 5e-4;
    std::size_t max_steps = 25; ///< epochs over the edit set
    std::size_t batch_size = 32;
    double early_stop_loss = 0.01;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::vector<std::size_t> tracked_layers; ///< empty = every layer
    double drift_threshold = 0.25;
    std::size_t chunk_size = 100;
    bool double_projection = true;
    bool refresh_kfac = false;
    bool joint = false;
    std::size_t mc_samples = 1;
    bool empirical_fisher = false;
    std::uint64_t seed = 0;

    /// Throws a validation error naming the offending field.
    void validate() const;
};

struct StepRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double batch_loss = 0.0;
    double quadratic_form = 0.0; ///< (theta - theta0)^T C (theta - theta0) under the initial curvature
    double delta_norm_sq = 0.0;  ///< ||theta - theta0||^2 over tracked layers
    double lambda_gamma = 0.0;   ///< cutoff of the projector that produced this step
    std::vector<double> projected_fraction; ///< ||Q_proj|| / ||Q|| per tracked layer
};

struct EpochRecord {
    std::size_t epoch = 0;
    double edit_loss = 0.0;
};

struct RebuildEvent {
    std::size_t step = 0;
    double relative_drift = 0.0;
};

struct EditTelemetry {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::vector<RebuildEvent> rebuilds;
    double initial_lambda_gamma = 0.0;
    double initial_retained_fraction = 0.0; ///< smallest over tracked layers
};

struct OptimizerState {
    std::vector<Matrix> first;
    std::vector<Matrix> second;
    std::size_t t = 0;
};

OptimizerState init_optimizer(const FeedForwardNet& net);

/// Parameter delta for one step. For Adam the update is built from the
/// projected gradient; when `cache` is given (double projection) the update
/// is projected again before it is returned.
LayerGradients optimizer_step(OptimizerState& state, const LayerGradients& q_proj, const EditConfig& config,
                              const ProjectorCache* cache = nullptr);

/// ||now - ref|| / ||ref|| > threshold.
bool drift_check(const Vector& theta_now, const Vector& theta_ref, double threshold);

/// Tracked layers flattened in canonical order.
Vector tracked_parameters(const FeedForwardNet& net, const std::vector<std::size_t>& layers);

struct EditResult {
    FeedForwardNet net;
    EditTelemetry telemetry;
};

/// Invoked after every epoch with the current network.
using EpochObserver = std::function<void(const FeedForwardNet&, const EpochRecord&)>;
/// Invoked after every applied step.
using StepObserver = std::function<void(const FeedForwardNet&, const StepRecord&)>;

/// Projected fine-tuning on the edit set. `cap` enables drift-triggered
/// re-estimation of the curvature; without it the initial projector is kept.
EditResult edit_batch(const FeedForwardNet& net, const LabeledDataset& edit, const CurvatureModel& curvature,
                      const EditConfig& config, const LabeledDataset* cap = nullptr,
                      const EpochObserver& observer = {}, const StepObserver& step_observer = {});

struct SequentialResult {
    std::vector<FeedForwardNet> nets; ///< model after each chunk
    KfacFactors factors;              ///< accumulated statistics after the last chunk
    EditTelemetry telemetry;
};

/// Chunked editing with streaming K-FAC aggregation. Optimizer moments reset
/// per chunk.
SequentialResult edit_sequential(const FeedForwardNet& net, const std::vector<LabeledDataset>& chunks,
                                 const KfacFactors& initial, const EditConfig& config);

/// Split a dataset into consecutive chunks of `chunk_size`.
std::vector<LabeledDataset> make_chunks(const LabeledDataset& data, std::size_t chunk_size);

} // namespace crispe

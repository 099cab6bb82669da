#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "crispe/editor.hpp"

namespace crispe {

/// Held-out fraction for both the capability and the edit task.
inline constexpr double kHeldOutFraction = 1.0 / 6.0;

struct PretrainConfig {
    std::size_t epochs = 30;
    double learning_rate = 0.1;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

struct PretrainResult {
    FeedForwardNet net;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0; ///< NaN when no test set is given
};

/// Plain minibatch SGD on the mean cross-entropy.
PretrainResult pretrain(const FeedForwardNet& net, const LabeledDataset& train, const LabeledDataset* test,
                        const PretrainConfig& config);

struct ExperimentData {
    LabeledDataset cap_train;
    LabeledDataset cap_test;
    LabeledDataset edit_train;
    LabeledDataset edit_test;
};

/// Split both tasks into train / held-out parts.
ExperimentData make_experiment(const LabeledDataset& cap, const LabeledDataset& edit, std::uint64_t seed);

/// Desk-scale stand-in for the image pair: `n_cap` capability and `n_edit`
/// edit examples before splitting.
ExperimentData synthetic_experiment(std::uint64_t seed, std::size_t n_cap, std::size_t n_edit, std::size_t dim,
                                    int classes);

/// First `n` examples (or all when n == 0 or n >= size).
LabeledDataset head(const LabeledDataset& data, std::size_t n);

struct TradeoffRecord {
    std::string curvature; ///< "none" marks the zero-curvature control
    double gamma = 0.0;
    double k = 0.0;
    double cap_acc = 0.0;
    double edit_acc = 0.0;
    double retained_energy = 0.0;
    std::size_t rebuilds = 0;
    double wall_ms = 0.0;
};

/// gamma = 1 - 10^-k.
double gamma_from_k(double k);
std::vector<double> default_k_grid();

/// Sweep defaults: SGD at lr 0.05 and drift refresh for every curvature kind,
/// otherwise the editor defaults.
EditConfig sweep_edit_config();

struct SweepOptions {
    std::vector<std::string> kinds{"none", "gnh", "kfac", "ekfac", "actcov"};
    std::vector<double> k_grid = default_k_grid();
    EditConfig edit = sweep_edit_config();
    std::size_t curvature_examples = 1000; ///< capability examples used to estimate curvature (0 = all)
    bool timing = false;                   ///< record wall time; off keeps the CSV reproducible
    std::uint64_t seed = 0;
};

/// Stable per-job seed from (kind, k, base seed).
std::uint64_t job_seed(const std::string& kind, double k, std::uint64_t base);

std::vector<TradeoffRecord> sweep_gamma(const FeedForwardNet& net0, const ExperimentData& data,
                                        const SweepOptions& options);

inline constexpr const char* kSweepCsvHeader = "curvature,gamma,k,cap_acc,edit_acc,retained_energy,rebuilds,wall_ms";

void write_sweep_csv(std::ostream& out, const std::vector<TradeoffRecord>& records, const SweepOptions& options);
std::string sweep_csv(const std::vector<TradeoffRecord>& records, const SweepOptions& options);

struct CurvePoint {
    double cap_acc = 0.0;
    double edit_acc = 0.0;
};

/// Accuracies after every `every` optimizer steps of an edit run, starting
/// with the unedited model.
std::vector<CurvePoint> edit_curve(const FeedForwardNet& net0, const ExperimentData& data,
                                   const CurvatureModel& model, const EditConfig& config, std::size_t every = 1);

/// Capability accuracy on `curve` at `edit_acc` by linear interpolation over
/// the points sorted by edit accuracy. NaN outside the covered range.
double cap_at_edit_accuracy(std::vector<CurvePoint> curve, double edit_acc);

/// Points not dominated in both accuracies, sorted by edit accuracy.
std::vector<CurvePoint> pareto_front(const std::vector<CurvePoint>& points);

/// Highest-capability point whose edit accuracy is within `window` of
/// `edit_acc`; NaN fields when none is close enough.
CurvePoint best_near_edit_accuracy(const std::vector<CurvePoint>& curve, double edit_acc, double window);

struct RetentionReport {
    double chunk1_after_first = 0.0;   ///< chunk-1 accuracy right after chunk 1
    double chunk1_final = 0.0;         ///< chunk-1 accuracy after the last chunk
    double cap_projected = 0.0;
    double cap_unprojected = 0.0;
    double chunk1_final_unprojected = 0.0;
    std::vector<double> cap_per_chunk;
};

/// Sequential editing on consecutive chunks of the edit set against plain
/// sequential fine-tuning with the same optimizer settings.
RetentionReport sequential_retention(const FeedForwardNet& net0, const ExperimentData& data, std::size_t chunks,
                                     std::size_t per_chunk, const EditConfig& config,
                                     std::size_t curvature_examples = 1000);

} // namespace crispe

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>
#include <vector>

#include "crispe/linalg.hpp"

namespace crispe {

/// Counter-based seed derivation (splitmix64 finaliser). Used wherever a
/// stream must be reproducible independently of iteration order.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

enum class Provenance { IdxFile, Synthetic };

/// Classification data. Row i of `inputs` is example i, features in [0, 1].
struct LabeledDataset {
    Matrix inputs;
    std::vector<int> labels;
    int class_count = 0;
    Provenance provenance = Provenance::Synthetic;

    std::size_t size() const { return labels.size(); }
    Eigen::Index dim() const { return inputs.cols(); }
    bool empty() const { return labels.empty(); }
    Vector x(std::size_t i) const { return inputs.row(static_cast<Eigen::Index>(i)).transpose(); }
    int y(std::size_t i) const { return labels[i]; }

    LabeledDataset subset(const std::vector<std::size_t>& indices) const;
    LabeledDataset slice(std::size_t begin, std::size_t end) const;
    void validate() const;
};

/// Seeded held-out split; `test_fraction` of the examples go to the second set.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& data, double test_fraction, std::uint64_t seed);

LabeledDataset concatenate(const LabeledDataset& a, const LabeledDataset& b);

// IDX (big-endian header, u8 payload).
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
void write_idx(const LabeledDataset& data, const std::filesystem::path& images, const std::filesystem::path& labels,
               std::uint32_t rows, std::uint32_t cols);

struct SyntheticTasks {
    LabeledDataset task_a;
    LabeledDataset task_b;
};

/// Width of the isotropic noise around each class mean.
inline constexpr double kSyntheticSigma = 0.04;

/// Two Gaussian-mixture tasks sharing an input space. Every class mean is at
/// least 6 sigma from every other mean across both tasks; task B's means sit
/// close to (but separated from) task A's, with permuted labels, so learning B
/// interferes with A.
SyntheticTasks synthetic_tasks(std::uint64_t seed, std::size_t n_per_task, std::size_t dim, int classes);

} // namespace crispe

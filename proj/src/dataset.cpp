#include "crispe/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "crispe/error.hpp"

namespace crispe {

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const {
    LabeledDataset out;
    out.class_count = class_count;
    out.provenance = provenance;
    out.inputs.resize(static_cast<Eigen::Index>(indices.size()), inputs.cols());
    out.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        require(indices[r] < size(), ErrorKind::Dimension, "subset: index out of range");
        out.inputs.row(static_cast<Eigen::Index>(r)) = inputs.row(static_cast<Eigen::Index>(indices[r]));
        out.labels.push_back(labels[indices[r]]);
    }
    return out;
}

LabeledDataset LabeledDataset::slice(std::size_t begin, std::size_t end) const {
    end = std::min(end, size());
    begin = std::min(begin, end);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return subset(idx);
}

void LabeledDataset::validate() const {
    require(static_cast<std::size_t>(inputs.rows()) == labels.size(), ErrorKind::Dimension,
            "dataset: " + std::to_string(inputs.rows()) + " inputs but " + std::to_string(labels.size()) + " labels");
    require(class_count >= 1, ErrorKind::Validation, "dataset: class_count must be positive");
    for (std::size_t i = 0; i < labels.size(); ++i)
        require(labels[i] >= 0 && labels[i] < class_count, ErrorKind::Validation,
                "dataset: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) + " outside [0, " +
                    std::to_string(class_count) + ")");
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& data, double test_fraction, std::uint64_t seed) {
    require(test_fraction > 0.0 && test_fraction < 1.0, ErrorKind::Validation, "split: fraction must lie in (0, 1)");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
    std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {data.subset(train), data.subset(test)};
}

LabeledDataset concatenate(const LabeledDataset& a, const LabeledDataset& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    require(a.dim() == b.dim(), ErrorKind::Dimension, "concatenate: feature widths differ");
    LabeledDataset out;
    out.class_count = std::max(a.class_count, b.class_count);
    out.provenance = a.provenance;
    out.inputs.resize(static_cast<Eigen::Index>(a.size() + b.size()), a.dim());
    out.inputs << a.inputs, b.inputs;
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    return out;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::filesystem::path& path) {
    if (offset + 4 > buf.size())
        fail(ErrorKind::Parse, path.string() + ": truncated header at byte offset " + std::to_string(offset));
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                static_cast<char>(v)};
    out.write(b.data(), 4);
}

std::string hex32(std::uint32_t v) {
    char buf[11];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

} // namespace

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = read_file(images);
    const auto lab = read_file(labels);

    const std::uint32_t img_magic = read_be32(img, 0, images);
    if (img_magic != kIdxImageMagic)
        fail(ErrorKind::Parse, images.string() + ": bad magic " + hex32(img_magic) + " at byte offset 0");
    const std::uint32_t lab_magic = read_be32(lab, 0, labels);
    if (lab_magic != kIdxLabelMagic)
        fail(ErrorKind::Parse, labels.string() + ": bad magic " + hex32(lab_magic) + " at byte offset 0");

    const std::uint32_t n = read_be32(img, 4, images);
    const std::uint32_t rows = read_be32(img, 8, images);
    const std::uint32_t cols = read_be32(img, 12, images);
    const std::uint32_t n_labels = read_be32(lab, 4, labels);
    if (n != n_labels)
        fail(ErrorKind::Parse, "image count " + std::to_string(n) + " (byte offset 4 of " + images.string() +
                                   ") does not match label count " + std::to_string(n_labels) + " (byte offset 4 of " +
                                   labels.string() + ")");

    const std::size_t pixels = std::size_t{rows} * cols;
    const std::size_t need_img = 16 + std::size_t{n} * pixels;
    if (img.size() < need_img)
        fail(ErrorKind::Parse, images.string() + ": truncated payload, expected " + std::to_string(need_img) +
                                   " bytes, file ends at byte offset " + std::to_string(img.size()));
    if (lab.size() < 8 + std::size_t{n})
        fail(ErrorKind::Parse, labels.string() + ": truncated payload, file ends at byte offset " + std::to_string(lab.size()));

    LabeledDataset out;
    out.provenance = Provenance::IdxFile;
    out.inputs.resize(n, static_cast<Eigen::Index>(pixels));
    out.labels.resize(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < pixels; ++j)
            out.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = img[16 + i * pixels + j] / 255.0;
        out.labels[i] = lab[8 + i];
        max_label = std::max(max_label, out.labels[i]);
    }
    out.class_count = std::max(10, max_label + 1);
    return out;
}

void write_idx(const LabeledDataset& data, const std::filesystem::path& images, const std::filesystem::path& labels,
               std::uint32_t rows, std::uint32_t cols) {
    require(static_cast<std::size_t>(data.dim()) == std::size_t{rows} * cols, ErrorKind::Dimension,
            "write_idx: feature width does not equal rows*cols");
    std::ofstream img(images, std::ios::binary);
    std::ofstream lab(labels, std::ios::binary);
    if (!img || !lab) fail(ErrorKind::Io, "write_idx: cannot open output files");
    put_be32(img, kIdxImageMagic);
    put_be32(img, static_cast<std::uint32_t>(data.size()));
    put_be32(img, rows);
    put_be32(img, cols);
    put_be32(lab, kIdxLabelMagic);
    put_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (Eigen::Index j = 0; j < data.dim(); ++j) {
            const double v = std::clamp(data.inputs(static_cast<Eigen::Index>(i), j), 0.0, 1.0);
            img.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
        lab.put(static_cast<char>(static_cast<unsigned char>(data.labels[i])));
    }
    if (!img || !lab) fail(ErrorKind::Io, "write_idx: write failed");
}

namespace {

// Distance of a task-B mean from the task-A mean it shadows, in units of sigma.
constexpr double kShadowOffset = 14.0;
constexpr double kMinSeparation = 6.0;

bool separated(const Vector& candidate, const std::vector<Vector>& others) {
    for (const auto& o : others)
        if ((candidate - o).norm() < kMinSeparation * kSyntheticSigma) return false;
    return true;
}

LabeledDataset sample_task(Rng& rng, const std::vector<Vector>& means, std::size_t n) {
    const auto classes = static_cast<int>(means.size());
    const auto dim = means.front().size();
    LabeledDataset out;
    out.class_count = classes;
    out.provenance = Provenance::Synthetic;
    out.inputs.resize(static_cast<Eigen::Index>(n), dim);
    out.labels.resize(n);
    std::normal_distribution<double> normal(0.0, kSyntheticSigma);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
        out.labels[i] = label;
        for (Eigen::Index j = 0; j < dim; ++j)
            out.inputs(static_cast<Eigen::Index>(i), j) = std::clamp(means[static_cast<std::size_t>(label)][j] + normal(rng), 0.0, 1.0);
    }
    return out;
}

} // namespace

SyntheticTasks synthetic_tasks(std::uint64_t seed, std::size_t n_per_task, std::size_t dim, int classes) {
    require(classes >= 1, ErrorKind::Validation, "synthetic_tasks: need at least one class");
    require(dim >= static_cast<std::size_t>(classes), ErrorKind::Validation, "synthetic_tasks: dim must be >= class count");
    Rng rng(seed);
    std::uniform_real_distribution<double> centre(0.25, 0.75);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<Vector> all;
    std::vector<Vector> means_a;
    while (means_a.size() < static_cast<std::size_t>(classes)) {
        Vector m(static_cast<Eigen::Index>(dim));
        for (auto& x : m) x = centre(rng);
        if (!separated(m, all)) continue;
        means_a.push_back(m);
        all.push_back(m);
    }

    // Task B label c sits near task A class (c + 1) mod classes, so the two
    // tasks share input regions and an unconstrained edit interferes.
    std::vector<Vector> means_b;
    while (means_b.size() < static_cast<std::size_t>(classes)) {
        Vector dir(static_cast<Eigen::Index>(dim));
        for (auto& x : dir) x = normal(rng);
        const Vector& anchor = means_a[(means_b.size() + 1) % static_cast<std::size_t>(classes)];
        Vector m = anchor + kShadowOffset * kSyntheticSigma * dir / dir.norm();
        if (!separated(m, all)) continue;
        means_b.push_back(m);
        all.push_back(m);
    }

    SyntheticTasks out;
    out.task_a = sample_task(rng, means_a, n_per_task);
    out.task_b = sample_task(rng, means_b, n_per_task);
    return out;
}

} // namespace crispe

#include "crispe/projection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crispe/error.hpp"

namespace crispe {

const LayerProjector* ProjectorCache::find(std::size_t layer) const {
    for (const auto& l : layers)
        if (l.shape.layer == layer) return &l;
    return nullptr;
}

bool ProjectorCache::tracks(std::size_t layer) const {
    if (joint) {
        for (const auto& s : joint->shapes)
            if (s.layer == layer) return true;
        return false;
    }
    return find(layer) != nullptr;
}

std::vector<std::size_t> ProjectorCache::tracked_layers() const {
    std::vector<std::size_t> out;
    if (joint)
        for (const auto& s : joint->shapes) out.push_back(s.layer);
    else
        for (const auto& l : layers) out.push_back(l.shape.layer);
    return out;
}

namespace {

struct DenseCut {
    Matrix p;
    double lambda_gamma = linalg::kNoNullspace;
    double retained_fraction = 0.0;
    std::size_t removed_rank = 0;
};

// Curvature magnitude ranks directions, so indefinite (exact Hessian) blocks
// treat strong negative curvature as sharp. PSD blocks are unaffected.
DenseCut dense_cut(const Matrix& block, double gamma) {
    const linalg::SymEig eig = linalg::sym_eig(block);
    const Eigen::Index n = eig.values.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return std::abs(eig.values[a]) > std::abs(eig.values[b]);
    });
    linalg::SymEig ranked;
    ranked.vectors.resize(n, n);
    ranked.values.resize(n);
    for (Eigen::Index c = 0; c < n; ++c) {
        ranked.vectors.col(c) = eig.vectors.col(order[static_cast<std::size_t>(c)]);
        ranked.values[c] = std::abs(eig.values[order[static_cast<std::size_t>(c)]]);
    }
    const std::size_t k = linalg::energy_cutoff_index(ranked.values, gamma);
    DenseCut out;
    out.p = linalg::dense_projector(ranked, k);
    out.removed_rank = k;
    const double total = ranked.values.sum();
    out.retained_fraction = total > 0.0 ? ranked.values.head(static_cast<Eigen::Index>(k)).sum() / total : 0.0;
    out.lambda_gamma = k < static_cast<std::size_t>(n) ? ranked.values[static_cast<Eigen::Index>(k)] : linalg::kNoNullspace;
    return out;
}

LayerProjector factored_layer(const LayerShape& shape, Matrix u_out, Vector lambda_out, Matrix u_in, Vector lambda_in,
                              const linalg::GridCutoff& cut) {
    LayerProjector lp;
    lp.shape = shape;
    FactoredProjector f;
    f.u_out = std::move(u_out);
    f.u_in = std::move(u_in);
    f.lambda_out = std::move(lambda_out);
    f.lambda_in = std::move(lambda_in);
    f.mask = cut.mask;
    f.passthrough = (cut.mask.array() == 1.0).all();
    lp.op = std::move(f);
    lp.lambda_gamma = cut.lambda_gamma;
    lp.removed_rank = cut.retained;
    lp.retained_fraction = cut.total_energy > 0.0 ? cut.retained_energy / cut.total_energy : 0.0;
    return lp;
}

void check_gamma(double gamma) {
    require(gamma > 0.0 && gamma < 1.0, ErrorKind::Validation,
            "gamma must lie in (0, 1), got " + std::to_string(gamma));
}

} // namespace

ProjectorCache build_projector(const CurvatureModel& model, double gamma, const ProjectorOptions& options) {
    check_gamma(gamma);
    ProjectorCache cache;
    cache.gamma = gamma;
    cache.kind = model.kind();
    cache.built_at = std::chrono::system_clock::now();

    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, ExactHessianModel> || std::is_same_v<T, GnhModel>) {
                const auto& dense = m.dense;
                if (options.joint) {
                    DenseCut cut = dense_cut(dense.matrix, gamma);
                    cache.joint = JointProjector{dense.shapes, std::move(cut.p), cut.lambda_gamma, cut.retained_fraction,
                                                cut.removed_rank};
                    return;
                }
                Eigen::Index off = 0;
                for (const auto& s : dense.shapes) {
                    const Eigen::Index size = s.d_out * s.d_in;
                    DenseCut cut = dense_cut(dense.matrix.block(off, off, size, size), gamma);
                    off += size;
                    LayerProjector lp;
                    lp.shape = s;
                    lp.op = DenseProjector{std::move(cut.p)};
                    lp.lambda_gamma = cut.lambda_gamma;
                    lp.retained_fraction = cut.retained_fraction;
                    lp.removed_rank = cut.removed_rank;
                    cache.layers.push_back(std::move(lp));
                }
            } else if constexpr (std::is_same_v<T, KfacModel>) {
                for (const auto& f : m.factors.layers) {
                    auto out = linalg::sym_eig(f.s);
                    auto in = linalg::sym_eig(f.a);
                    const auto cut = linalg::kron_energy_cutoff({out.values, in.values}, gamma);
                    cache.layers.push_back(factored_layer({f.layer, f.s.rows(), f.a.rows()}, std::move(out.vectors),
                                                          std::move(out.values), std::move(in.vectors),
                                                          std::move(in.values), cut));
                }
            } else if constexpr (std::is_same_v<T, EkfacModel>) {
                for (const auto& c : m.corrections) {
                    const auto* f = m.factors.find(c.layer);
                    require(f != nullptr, ErrorKind::State, "EK-FAC correction without factors for layer " + std::to_string(c.layer));
                    Vector lambda_out = (c.u_out.transpose() * f->s * c.u_out).diagonal();
                    Vector lambda_in = (c.u_in.transpose() * f->a * c.u_in).diagonal();
                    const auto cut = linalg::grid_energy_cutoff(c.corrected, gamma);
                    cache.layers.push_back(factored_layer({c.layer, c.u_out.rows(), c.u_in.rows()}, c.u_out,
                                                          std::move(lambda_out), c.u_in, std::move(lambda_in), cut));
                }
            } else {
                for (const auto& f : m.factors.layers) {
                    auto in = linalg::sym_eig(f.a);
                    const Eigen::Index d_out = f.s.rows();
                    const std::size_t k = linalg::energy_cutoff_index(in.values, gamma);
                    linalg::GridCutoff cut;
                    cut.lambda_gamma = k < static_cast<std::size_t>(in.values.size()) ? in.values[static_cast<Eigen::Index>(k)]
                                                                                     : linalg::kNoNullspace;
                    cut.mask.resize(d_out, in.values.size());
                    for (Eigen::Index j = 0; j < in.values.size(); ++j)
                        cut.mask.col(j).setConstant(in.values[j] <= cut.lambda_gamma ? 1.0 : 0.0);
                    cut.retained = k * static_cast<std::size_t>(d_out);
                    cut.total_energy = in.values.sum();
                    cut.retained_energy = in.values.head(static_cast<Eigen::Index>(k)).sum();
                    cache.layers.push_back(factored_layer({f.layer, d_out, f.a.rows()}, Matrix::Identity(d_out, d_out),
                                                          Vector::Ones(d_out), std::move(in.vectors),
                                                          std::move(in.values), cut));
                }
            }
        },
        model.data);
    return cache;
}

Matrix rotate_mask_rotate(const Matrix& u_out, const Matrix& u_in, const Matrix& mask, const Matrix& q) {
    const Matrix rotated = u_out.transpose() * q * u_in;
    return u_out * rotated.cwiseProduct(mask) * u_in.transpose();
}

namespace {

const LayerProjector& layer_or_fail(const ProjectorCache& cache, std::size_t layer, const Matrix& q) {
    const auto* lp = cache.find(layer);
    require(lp != nullptr, ErrorKind::State, "no projector for layer " + std::to_string(layer));
    require(q.rows() == lp->shape.d_out && q.cols() == lp->shape.d_in, ErrorKind::Dimension,
            "gradient for layer " + std::to_string(layer) + " is " + std::to_string(q.rows()) + "x" +
                std::to_string(q.cols()) + ", projector expects " + std::to_string(lp->shape.d_out) + "x" +
                std::to_string(lp->shape.d_in));
    return *lp;
}

} // namespace

Matrix project_dense(const ProjectorCache& cache, std::size_t layer, const Matrix& q) {
    const auto& lp = layer_or_fail(cache, layer, q);
    const auto* dense = std::get_if<DenseProjector>(&lp.op);
    require(dense != nullptr, ErrorKind::State, "layer " + std::to_string(layer) + " holds a factored projector");
    return linalg::unvec(dense->p * linalg::vec(q), q.rows(), q.cols());
}

Matrix project_kron(const ProjectorCache& cache, std::size_t layer, const Matrix& q) {
    const auto& lp = layer_or_fail(cache, layer, q);
    const auto* f = std::get_if<FactoredProjector>(&lp.op);
    require(f != nullptr, ErrorKind::State, "layer " + std::to_string(layer) + " holds a dense projector");
    if (f->passthrough) return q;
    return rotate_mask_rotate(f->u_out, f->u_in, f->mask, q);
}

LayerGradients project(const ProjectorCache& cache, const LayerGradients& g) {
    LayerGradients out = g;
    for (auto& b : out.blocks) b.setZero();
    if (cache.joint) {
        const auto& j = *cache.joint;
        Vector v(j.p.rows());
        Eigen::Index off = 0;
        for (const auto& s : j.shapes) {
            require(s.layer < g.size() && g[s.layer].rows() == s.d_out && g[s.layer].cols() == s.d_in,
                    ErrorKind::Dimension, "project: gradient shape mismatch at layer " + std::to_string(s.layer));
            v.segment(off, s.d_out * s.d_in) = linalg::vec(g[s.layer]);
            off += s.d_out * s.d_in;
        }
        const Vector pv = j.p * v;
        off = 0;
        for (const auto& s : j.shapes) {
            out[s.layer] = linalg::unvec(pv.segment(off, s.d_out * s.d_in), s.d_out, s.d_in);
            off += s.d_out * s.d_in;
        }
        return out;
    }
    for (const auto& lp : cache.layers) {
        const std::size_t l = lp.shape.layer;
        require(l < g.size(), ErrorKind::Dimension, "project: gradient has no block for layer " + std::to_string(l));
        out[l] = std::holds_alternative<DenseProjector>(lp.op) ? project_dense(cache, l, g[l]) : project_kron(cache, l, g[l]);
    }
    return out;
}

ResidualEnergy residual_energy(const ProjectorCache& cache, std::size_t layer) {
    if (cache.joint) return {cache.joint->retained_fraction, cache.joint->removed_rank};
    const auto* lp = cache.find(layer);
    require(lp != nullptr, ErrorKind::State, "no projector for layer " + std::to_string(layer));
    return {lp->retained_fraction, lp->removed_rank};
}

double max_lambda_gamma(const ProjectorCache& cache) {
    if (cache.joint) return cache.joint->lambda_gamma;
    double out = linalg::kNoNullspace;
    for (const auto& lp : cache.layers) out = std::max(out, lp.lambda_gamma);
    return out;
}

} // namespace crispe

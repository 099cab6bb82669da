#include "crispe/curvature.hpp"

#include <algorithm>
#include <cmath>

#include "crispe/error.hpp"

namespace crispe {

const char* to_string(CurvatureKind kind) noexcept {
    switch (kind) {
    case CurvatureKind::ExactHessian: return "hessian";
    case CurvatureKind::Gnh: return "gnh";
    case CurvatureKind::Kfac: return "kfac";
    case CurvatureKind::Ekfac: return "ekfac";
    case CurvatureKind::ActivationCov: return "actcov";
    }
    return "unknown";
}

CurvatureKind parse_curvature_kind(const std::string& name) {
    if (name == "hessian") return CurvatureKind::ExactHessian;
    if (name == "gnh") return CurvatureKind::Gnh;
    if (name == "kfac") return CurvatureKind::Kfac;
    if (name == "ekfac") return CurvatureKind::Ekfac;
    if (name == "actcov") return CurvatureKind::ActivationCov;
    fail(ErrorKind::Validation, "unknown curvature kind '" + name + "' (expected hessian, gnh, kfac, ekfac or actcov)");
}

const KfacLayerFactors* KfacFactors::find(std::size_t layer) const {
    for (const auto& f : layers)
        if (f.layer == layer) return &f;
    return nullptr;
}

std::uint64_t KfacFactors::sample_count() const {
    return layers.empty() ? 0 : layers.front().sample_count;
}

namespace {

std::vector<LayerShape> factor_shapes(const KfacFactors& f) {
    std::vector<LayerShape> out;
    for (const auto& l : f.layers) out.push_back({l.layer, l.s.rows(), l.a.rows()});
    return out;
}

} // namespace

CurvatureKind CurvatureModel::kind() const {
    return std::visit(
        [](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, ExactHessianModel>) return CurvatureKind::ExactHessian;
            else if constexpr (std::is_same_v<T, GnhModel>) return CurvatureKind::Gnh;
            else if constexpr (std::is_same_v<T, KfacModel>) return CurvatureKind::Kfac;
            else if constexpr (std::is_same_v<T, EkfacModel>) return CurvatureKind::Ekfac;
            else return CurvatureKind::ActivationCov;
        },
        data);
}

std::vector<LayerShape> CurvatureModel::shapes() const {
    return std::visit(
        [](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, ExactHessianModel> || std::is_same_v<T, GnhModel>) return m.dense.shapes;
            else return factor_shapes(m.factors);
        },
        data);
}

std::vector<std::size_t> CurvatureModel::layers() const {
    std::vector<std::size_t> out;
    for (const auto& s : shapes()) out.push_back(s.layer);
    return out;
}

std::vector<std::size_t> resolve_layers(const FeedForwardNet& net, const std::vector<std::size_t>& layers) {
    std::vector<std::size_t> out = layers;
    if (out.empty())
        for (std::size_t l = 0; l < net.layer_count(); ++l) out.push_back(l);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    for (auto l : out)
        require(l < net.layer_count(), ErrorKind::Validation,
                "layer index " + std::to_string(l) + " out of range for a " + std::to_string(net.layer_count()) +
                    "-layer network");
    return out;
}

namespace {

std::vector<LayerShape> shapes_for(const FeedForwardNet& net, const std::vector<std::size_t>& layers) {
    std::vector<LayerShape> out;
    for (auto l : layers) out.push_back({l, net.layer(l).out_features(), net.layer(l).weights.cols()});
    return out;
}

Eigen::Index tracked_count(const std::vector<LayerShape>& shapes) {
    Eigen::Index p = 0;
    for (const auto& s : shapes) p += s.d_out * s.d_in;
    return p;
}

void symmetrize_lower(Matrix& m) {
    m.triangularView<Eigen::StrictlyUpper>() = m.transpose();
}

void require_nonempty(const LabeledDataset& data, const char* what) {
    require(!data.empty(), ErrorKind::Validation, std::string(what) + ": empty dataset");
}

} // namespace

CurvatureModel exact_hessian(const FeedForwardNet& net, const LabeledDataset& cap, const std::vector<std::size_t>& layers) {
    require_nonempty(cap, "exact_hessian");
    const auto tracked = resolve_layers(net, layers);
    const auto shapes = shapes_for(net, tracked);
    const Eigen::Index pt = tracked_count(shapes);
    require(pt <= kExactHessianParamLimit, ErrorKind::Size,
            "exact_hessian: " + std::to_string(pt) + " tracked parameters exceeds limit " +
                std::to_string(kExactHessianParamLimit));

    std::vector<Eigen::Index> index; // tracked position -> global parameter index
    for (auto l : tracked)
        for (Eigen::Index j = 0; j < net.layer(l).param_count(); ++j) index.push_back(net.offset(l) + j);

    Matrix h(pt, pt);
    Vector e = Vector::Zero(net.param_count());
    for (Eigen::Index c = 0; c < pt; ++c) {
        e[index[static_cast<std::size_t>(c)]] = 1.0;
        const Vector col = hessian_vector_product(net, cap, e);
        e[index[static_cast<std::size_t>(c)]] = 0.0;
        for (Eigen::Index r = 0; r < pt; ++r) h(r, c) = col[index[static_cast<std::size_t>(r)]];
    }

    ExactHessianModel model;
    const double norm = h.norm();
    model.asymmetry = norm > 0.0 ? (h - h.transpose()).norm() / norm : 0.0;
    model.dense.shapes = shapes;
    model.dense.matrix = 0.5 * (h + h.transpose());
    model.dense.sample_count = cap.size();
    return {model};
}

CurvatureModel exact_gnh(const FeedForwardNet& net, const LabeledDataset& cap, const std::vector<std::size_t>& layers) {
    require_nonempty(cap, "exact_gnh");
    const auto tracked = resolve_layers(net, layers);
    const auto shapes = shapes_for(net, tracked);
    const Eigen::Index pt = tracked_count(shapes);
    require(pt <= kGnhParamLimit, ErrorKind::Size,
            "exact_gnh: " + std::to_string(pt) + " tracked parameters exceeds limit " + std::to_string(kGnhParamLimit));

    const Eigen::Index m = net.class_count();
    // diag(pi) - pi pi^T = R^T R with R = (I - q q^T) diag(q), q = sqrt(pi).
    // Rows R J of every example are stacked and reduced with a rank update.
    constexpr std::size_t kBatch = 64;
    Matrix g = Matrix::Zero(pt, pt);
    Matrix rows(pt, static_cast<Eigen::Index>(kBatch) * m);
    for (std::size_t start = 0; start < cap.size(); start += kBatch) {
        const std::size_t stop = std::min(cap.size(), start + kBatch);
        rows.resize(pt, static_cast<Eigen::Index>(stop - start) * m);
        for (std::size_t i = start; i < stop; ++i) {
            const ForwardTrace trace = forward(net, cap.x(i));
            Matrix jac(m, pt);
            for (Eigen::Index r = 0; r < m; ++r) {
                const auto deltas = backprop_preacts(net, trace, Vector::Unit(m, r));
                Eigen::Index off = 0;
                for (auto l : tracked) {
                    const Matrix block = deltas[l] * trace.inputs[l].transpose();
                    jac.row(r).segment(off, block.size()) = linalg::vec(block).transpose();
                    off += block.size();
                }
            }
            const Vector q = trace.probs.cwiseSqrt();
            const Matrix r_factor = (Matrix::Identity(m, m) - q * q.transpose()) * q.asDiagonal();
            rows.middleCols(static_cast<Eigen::Index>(i - start) * m, m) = (r_factor * jac).transpose();
        }
        g.selfadjointView<Eigen::Lower>().rankUpdate(rows);
    }
    symmetrize_lower(g);
    g /= static_cast<double>(cap.size());

    GnhModel model;
    model.dense.shapes = shapes;
    model.dense.matrix = std::move(g);
    model.dense.sample_count = cap.size();
    return {model};
}

KfacFactors kfac_factors(const FeedForwardNet& net, const LabeledDataset& cap, const EstimateOptions& options) {
    require_nonempty(cap, "kfac_estimate");
    require(options.mc_samples >= 1, ErrorKind::Validation, "kfac_estimate: mc_samples must be >= 1");
    const auto tracked = resolve_layers(net, options.layers);

    KfacFactors out;
    for (auto l : tracked) {
        const auto& layer = net.layer(l);
        out.layers.push_back({l, Matrix::Zero(layer.weights.cols(), layer.weights.cols()),
                              Matrix::Zero(layer.out_features(), layer.out_features()), 0});
    }
    for (std::size_t i = 0; i < cap.size(); ++i) {
        const ForwardTrace trace = forward(net, cap.x(i));
        for (std::size_t t = 0; t < tracked.size(); ++t)
            out.layers[t].a.selfadjointView<Eigen::Lower>().rankUpdate(trace.inputs[tracked[t]]);
        Rng rng(derive_seed(options.seed, options.index_offset + i));
        for (std::size_t s = 0; s < options.mc_samples; ++s) {
            const auto pg = sample_pseudo_gradient(net, trace, rng, options.empirical_fisher ? cap.y(i) : -1);
            for (std::size_t t = 0; t < tracked.size(); ++t)
                out.layers[t].s.selfadjointView<Eigen::Lower>().rankUpdate(pg.preact_grads[tracked[t]]);
        }
    }
    const auto n = static_cast<double>(cap.size());
    const auto draws = n * static_cast<double>(options.mc_samples);
    for (auto& f : out.layers) {
        symmetrize_lower(f.a);
        symmetrize_lower(f.s);
        f.a /= n;
        f.s /= draws;
        f.sample_count = cap.size() * options.mc_samples;
    }
    return out;
}

CurvatureModel kfac_estimate(const FeedForwardNet& net, const LabeledDataset& cap, const EstimateOptions& options) {
    return {KfacModel{kfac_factors(net, cap, options)}};
}

CurvatureModel ekfac_correct(const FeedForwardNet& net, const LabeledDataset& cap, const KfacFactors& kfac,
                             const EstimateOptions& options) {
    require_nonempty(cap, "ekfac_correct");
    require(!kfac.layers.empty(), ErrorKind::State, "ekfac_correct: no K-FAC factors to correct");
    require(options.mc_samples >= 1, ErrorKind::Validation, "ekfac_correct: mc_samples must be >= 1");

    EkfacModel model;
    model.factors = kfac;
    for (const auto& f : kfac.layers) {
        require(f.layer < net.layer_count(), ErrorKind::State, "ekfac_correct: factor for missing layer");
        require(f.a.rows() == net.layer(f.layer).weights.cols() && f.s.rows() == net.layer(f.layer).out_features(),
                ErrorKind::State, "ekfac_correct: factor shapes do not match layer " + std::to_string(f.layer));
        EkfacLayer c;
        c.layer = f.layer;
        c.u_out = linalg::sym_eig(f.s).vectors;
        c.u_in = linalg::sym_eig(f.a).vectors;
        c.corrected = Matrix::Zero(f.s.rows(), f.a.rows());
        model.corrections.push_back(std::move(c));
    }

    for (std::size_t i = 0; i < cap.size(); ++i) {
        const ForwardTrace trace = forward(net, cap.x(i));
        std::vector<Vector> rotated_in;
        for (const auto& c : model.corrections) rotated_in.push_back(c.u_in.transpose() * trace.inputs[c.layer]);
        Rng rng(derive_seed(options.seed, options.index_offset + i));
        for (std::size_t s = 0; s < options.mc_samples; ++s) {
            const auto pg = sample_pseudo_gradient(net, trace, rng, options.empirical_fisher ? cap.y(i) : -1);
            for (std::size_t t = 0; t < model.corrections.size(); ++t) {
                auto& c = model.corrections[t];
                const Vector rotated_out = c.u_out.transpose() * pg.preact_grads[c.layer];
                c.corrected.noalias() += rotated_out.cwiseAbs2() * rotated_in[t].cwiseAbs2().transpose();
            }
        }
    }
    const double draws = static_cast<double>(cap.size() * options.mc_samples);
    for (auto& c : model.corrections) c.corrected /= draws;
    return {model};
}

CurvatureModel activation_covariance(const FeedForwardNet& net, const LabeledDataset& cap,
                                     const std::vector<std::size_t>& layers) {
    require_nonempty(cap, "activation_covariance");
    const auto tracked = resolve_layers(net, layers);
    ActivationCovModel model;
    for (auto l : tracked) {
        const auto& layer = net.layer(l);
        model.factors.layers.push_back({l, Matrix::Zero(layer.weights.cols(), layer.weights.cols()),
                                        Matrix::Identity(layer.out_features(), layer.out_features()), cap.size()});
    }
    for (std::size_t i = 0; i < cap.size(); ++i) {
        const ForwardTrace trace = forward(net, cap.x(i));
        for (auto& f : model.factors.layers) f.a.selfadjointView<Eigen::Lower>().rankUpdate(trace.inputs[f.layer]);
    }
    for (auto& f : model.factors.layers) {
        symmetrize_lower(f.a);
        f.a /= static_cast<double>(cap.size());
    }
    return {model};
}

CurvatureModel estimate_curvature(CurvatureKind kind, const FeedForwardNet& net, const LabeledDataset& cap,
                                  const EstimateOptions& options) {
    switch (kind) {
    case CurvatureKind::ExactHessian: return exact_hessian(net, cap, options.layers);
    case CurvatureKind::Gnh: return exact_gnh(net, cap, options.layers);
    case CurvatureKind::Kfac: return kfac_estimate(net, cap, options);
    case CurvatureKind::Ekfac: return ekfac_correct(net, cap, kfac_factors(net, cap, options), options);
    case CurvatureKind::ActivationCov: return activation_covariance(net, cap, options.layers);
    }
    fail(ErrorKind::Validation, "unknown curvature kind");
}

CurvatureModel zero_curvature(const FeedForwardNet& net, const std::vector<std::size_t>& layers) {
    KfacModel model;
    for (auto l : resolve_layers(net, layers)) {
        const auto& layer = net.layer(l);
        model.factors.layers.push_back({l, Matrix::Zero(layer.weights.cols(), layer.weights.cols()),
                                        Matrix::Zero(layer.out_features(), layer.out_features()), 0});
    }
    return {model};
}

KfacFactors aggregate_factors(const KfacFactors& acc, const KfacFactors& incoming) {
    if (acc.layers.empty() || acc.sample_count() == 0) return incoming;
    if (incoming.layers.empty() || incoming.sample_count() == 0) return acc;
    require(acc.layers.size() == incoming.layers.size(), ErrorKind::Validation,
            "aggregate_factors: layer count mismatch");
    KfacFactors out;
    for (std::size_t t = 0; t < acc.layers.size(); ++t) {
        const auto& x = acc.layers[t];
        const auto& y = incoming.layers[t];
        require(x.layer == y.layer && x.a.rows() == y.a.rows() && x.s.rows() == y.s.rows(), ErrorKind::Validation,
                "aggregate_factors: shape mismatch at layer " + std::to_string(x.layer));
        const auto total = x.sample_count + y.sample_count;
        const double wx = static_cast<double>(x.sample_count) / static_cast<double>(total);
        const double wy = static_cast<double>(y.sample_count) / static_cast<double>(total);
        out.layers.push_back({x.layer, wx * x.a + wy * y.a, wx * x.s + wy * y.s, total});
    }
    return out;
}

BregmanReport bregman_divergence(const FeedForwardNet& net, const FeedForwardNet& net0, const LabeledDataset& data,
                                 const CurvatureModel* model) {
    require(net.same_shape(net0), ErrorKind::Validation, "bregman_divergence: architectures differ");
    require_nonempty(data, "bregman_divergence");
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Vector x = data.x(i);
        const int y = data.y(i);
        const ForwardTrace now = forward(net, x);
        const ForwardTrace base = forward(net0, x);
        Vector grad0 = base.probs;
        grad0[y] -= 1.0;
        total += cross_entropy(now.logits, y) - cross_entropy(base.logits, y) - grad0.dot(now.logits - base.logits);
    }
    BregmanReport report;
    report.value = total / static_cast<double>(data.size());
    if (model != nullptr) {
        const Vector delta = net.flatten() - net0.flatten();
        report.quadratic_estimate = 0.5 * quadratic_form(*model, unflatten(net, delta));
        report.relative_gap =
            std::abs(report.value - report.quadratic_estimate) / std::max(report.value, kBregmanFloor);
    }
    return report;
}

namespace {

const Matrix& block_for(const LayerGradients& delta, std::size_t layer, Eigen::Index d_out, Eigen::Index d_in) {
    require(layer < delta.size(), ErrorKind::Dimension, "quadratic_form: delta has no block for layer " + std::to_string(layer));
    const Matrix& b = delta[layer];
    require(b.rows() == d_out && b.cols() == d_in, ErrorKind::Dimension,
            "quadratic_form: delta block for layer " + std::to_string(layer) + " has the wrong shape");
    return b;
}

} // namespace

double quadratic_form(const CurvatureModel& model, const LayerGradients& delta) {
    return std::visit(
        [&](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, ExactHessianModel> || std::is_same_v<T, GnhModel>) {
                Vector v(m.dense.matrix.rows());
                Eigen::Index off = 0;
                for (const auto& s : m.dense.shapes) {
                    const Matrix& b = block_for(delta, s.layer, s.d_out, s.d_in);
                    v.segment(off, b.size()) = linalg::vec(b);
                    off += b.size();
                }
                return v.dot(m.dense.matrix * v);
            } else if constexpr (std::is_same_v<T, EkfacModel>) {
                double q = 0.0;
                for (const auto& c : m.corrections) {
                    const Matrix& b = block_for(delta, c.layer, c.u_out.rows(), c.u_in.rows());
                    const Matrix rotated = c.u_out.transpose() * b * c.u_in;
                    q += c.corrected.cwiseProduct(rotated.cwiseAbs2()).sum();
                }
                return q;
            } else {
                double q = 0.0;
                for (const auto& f : m.factors.layers) {
                    const Matrix& b = block_for(delta, f.layer, f.s.rows(), f.a.rows());
                    q += b.cwiseProduct(f.s * b * f.a).sum();
                }
                return q;
            }
        },
        model.data);
}

} // namespace crispe

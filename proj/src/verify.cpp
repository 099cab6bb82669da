#include "crispe/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "crispe/editor.hpp"
#include "crispe/error.hpp"
#include "crispe/harness.hpp"
#include "crispe/serialize.hpp"

namespace crispe {

bool VerifyReport::passed() const { return failures() == 0; }

std::size_t VerifyReport::failures() const {
    return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](const CheckResult& c) { return !c.passed; }));
}

std::string VerifyReport::format() const {
    std::ostringstream out;
    char line[512];
    for (const auto& c : checks) {
        if (std::isinf(c.lower))
            std::snprintf(line, sizeof line, "%s %-44s observed=%.3e bound<=%.3e", c.passed ? "PASS" : "FAIL", c.name.c_str(),
                          c.observed, c.upper);
        else
            std::snprintf(line, sizeof line, "%s %-44s observed=%.3e bound=[%.3e, %.3e]", c.passed ? "PASS" : "FAIL",
                          c.name.c_str(), c.observed, c.lower, c.upper);
        out << line;
        if (!c.detail.empty()) out << "  (" << c.detail << ")";
        out << '\n';
    }
    return out.str();
}

namespace {

CheckResult upper_check(std::string name, double observed, double tol, std::string detail = {}) {
    CheckResult c;
    c.name = std::move(name);
    c.observed = observed;
    c.upper = tol;
    c.passed = std::isfinite(observed) && observed <= tol;
    c.detail = std::move(detail);
    return c;
}

CheckResult band_check(std::string name, double observed, double lo, double hi, std::string detail = {}) {
    CheckResult c;
    c.name = std::move(name);
    c.observed = observed;
    c.lower = lo;
    c.upper = hi;
    c.passed = std::isfinite(observed) && observed >= lo && observed <= hi;
    c.detail = std::move(detail);
    return c;
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
    return m;
}

Matrix random_psd(Rng& rng, Eigen::Index n) {
    const Matrix b = random_matrix(rng, n, n);
    return b * b.transpose() / static_cast<double>(n);
}

Matrix random_symmetric(Rng& rng, Eigen::Index n) {
    const Matrix b = random_matrix(rng, n, n);
    return 0.5 * (b + b.transpose());
}

// Column-major Kronecker product, written out entry by entry.
Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            for (Eigen::Index k = 0; k < b.rows(); ++k)
                for (Eigen::Index l = 0; l < b.cols(); ++l) out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
    return out;
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

LabeledDataset random_data(Rng& rng, std::size_t n, Eigen::Index dim, int classes) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    LabeledDataset d;
    d.inputs.resize(static_cast<Eigen::Index>(n), dim);
    for (Eigen::Index j = 0; j < dim; ++j)
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) d.inputs(i, j) = unit(rng);
    for (std::size_t i = 0; i < n; ++i) d.labels.push_back(uniform_int(rng, 0, classes - 1));
    d.class_count = classes;
    return d;
}

LayerGradients random_like(Rng& rng, const FeedForwardNet& net) {
    LayerGradients g = net.zeros_like();
    for (auto& b : g.blocks) b = random_matrix(rng, b.rows(), b.cols());
    return g;
}

double dot(const LayerGradients& a, const LayerGradients& b) {
    double s = 0.0;
    for (std::size_t l = 0; l < a.size(); ++l) s += a[l].cwiseProduct(b[l]).sum();
    return s;
}

double norm(const LayerGradients& a) { return std::sqrt(dot(a, a)); }

LayerGradients minus(const LayerGradients& a, const LayerGradients& b) {
    LayerGradients out = a;
    for (std::size_t l = 0; l < a.size(); ++l) out[l] -= b[l];
    return out;
}

// Gradient of log p(label | x) over the full parameter vector via the Jacobian.
Vector label_gradient(const FeedForwardNet& net, const Vector& x, int label) {
    const Matrix jac = per_example_jacobian(net, x);
    Vector r = -softmax(forward(net, x).logits);
    r[label] += 1.0;
    return jac.transpose() * r;
}

} // namespace

CheckResult check_kron_equivalence(std::uint64_t seed, int trials, double tol, const KronApply& apply) {
    const KronApply formula = apply ? apply : KronApply(rotate_mask_rotate);
    Rng rng(derive_seed(seed, 0xD));
    std::bernoulli_distribution coin(0.5);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const Eigen::Index d_in = uniform_int(rng, 2, 16);
        const Eigen::Index d_out = uniform_int(rng, 2, 16);
        const Matrix u_in = linalg::sym_eig(random_psd(rng, d_in)).vectors;
        const Matrix u_out = linalg::sym_eig(random_psd(rng, d_out)).vectors;
        Matrix mask(d_out, d_in);
        for (Eigen::Index j = 0; j < d_in; ++j)
            for (Eigen::Index i = 0; i < d_out; ++i) mask(i, j) = coin(rng) ? 1.0 : 0.0;
        const Matrix x = random_matrix(rng, d_out, d_in);

        const Matrix basis = kron(u_in, u_out);
        const Matrix p = basis * linalg::vec(mask).asDiagonal() * basis.transpose();
        const Matrix dense = linalg::unvec(p * linalg::vec(x), d_out, d_in);
        worst = std::max(worst, (formula(u_out, u_in, mask, x) - dense).cwiseAbs().maxCoeff());
    }
    return upper_check("kron projector equivalence", worst, tol, std::to_string(trials) + " random layers");
}

CheckResult check_nullspace_containment(std::uint64_t seed, int trials, double tol) {
    Rng rng(derive_seed(seed, 0xC));
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        const int d = uniform_int(rng, 4, 8);
        const int h = uniform_int(rng, 4, 8);
        const int m = uniform_int(rng, 2, 6);
        const auto net = FeedForwardNet::random({d, h, m}, Activation::Tanh, rng(), 1.5);
        const auto cap = random_data(rng, 3, d, m);
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            const Matrix g = std::get<GnhModel>(exact_gnh(net, cap, {l}).data).dense.matrix;
            const Eigen::Index d_in = net.layer(l).weights.cols();
            Matrix acts(d_in, static_cast<Eigen::Index>(cap.size()));
            for (std::size_t i = 0; i < cap.size(); ++i) acts.col(static_cast<Eigen::Index>(i)) = forward(net, cap.x(i)).inputs[l];
            Eigen::JacobiSVD<Matrix> svd(acts, Eigen::ComputeFullU);
            const auto& sv = svd.singularValues();
            Eigen::Index rank = 0;
            for (Eigen::Index i = 0; i < sv.size(); ++i)
                if (sv[i] > 1e-12 * sv[0]) ++rank;
            const Matrix null_basis = svd.matrixU().rightCols(d_in - rank);
            const Matrix delta = random_matrix(rng, net.layer(l).weights.rows(), d_in) * null_basis * null_basis.transpose();
            const double denom = g.norm() * delta.norm();
            if (denom > 0.0) worst = std::max(worst, (g * linalg::vec(delta)).norm() / denom);
        }
    }
    return upper_check("gnh nullspace containment", worst, tol,
                       std::to_string(trials) + " nets x every layer, n=3 inputs");
}

std::vector<CheckResult> check_bregman_quadratic(std::uint64_t seed, int pairs, double gap_tol, double min_ratio) {
    Rng rng(derive_seed(seed, 0xB));
    double worst_gap = 0.0;
    double worst_ratio = std::numeric_limits<double>::infinity();
    for (int t = 0; t < pairs; ++t) {
        const auto net0 = FeedForwardNet::random({5, 6, 4}, Activation::Tanh, rng(), 1.5);
        const auto data = random_data(rng, 20, 5, 4);
        const CurvatureModel gnh = exact_gnh(net0, data);
        Vector dir = linalg::vec(random_matrix(rng, net0.param_count(), 1));
        dir /= dir.norm();
        double gaps[2];
        const double steps[2] = {1e-3, 1e-2};
        for (int s = 0; s < 2; ++s) {
            FeedForwardNet moved = net0;
            moved.assign(net0.flatten() + steps[s] * dir);
            gaps[s] = bregman_divergence(moved, net0, data, &gnh).relative_gap;
        }
        worst_gap = std::max(worst_gap, gaps[0]);
        worst_ratio = std::min(worst_ratio, gaps[1] / gaps[0]);
    }
    CheckResult ratio = upper_check("bregman gap decay gap(1e-2)/gap(1e-3)", worst_ratio, 0.0);
    ratio.lower = min_ratio;
    ratio.upper = std::numeric_limits<double>::infinity();
    ratio.passed = std::isfinite(worst_ratio) && worst_ratio >= min_ratio;
    return {upper_check("bregman vs quadratic at t=1e-3", worst_gap, gap_tol, std::to_string(pairs) + " pairs"),
            ratio};
}

std::vector<CheckResult> check_fisher_rate(std::uint64_t seed, const FisherRateConfig& config) {
    const auto net = FeedForwardNet::random({3, 4, 8}, Activation::Tanh, derive_seed(seed, 0xF), 2.0);
    Rng data_rng(derive_seed(seed, 0xF0));
    const auto single = random_data(data_rng, 1, 3, 8);
    const Matrix g = std::get<GnhModel>(exact_gnh(net, single).data).dense.matrix;
    const double g_norm = g.norm();
    const ForwardTrace trace = forward(net, single.x(0));
    const Eigen::Index p = net.param_count();

    constexpr Eigen::Index kBatch = 512;
    double sum_sq_small = 0.0;
    double sum_sq_large = 0.0;
    double worst_small = 0.0;
    for (std::size_t r = 0; r < config.replicates; ++r) {
        Rng rng(derive_seed(seed, 0x100 + r));
        Matrix f = Matrix::Zero(p, p);
        Matrix grads(p, kBatch);
        std::size_t drawn = 0;
        auto accumulate = [&](std::size_t until) {
            while (drawn < until) {
                const auto n = static_cast<Eigen::Index>(std::min<std::size_t>(kBatch, until - drawn));
                for (Eigen::Index c = 0; c < n; ++c) {
                    const auto pg = sample_pseudo_gradient(net, trace, rng);
                    Eigen::Index off = 0;
                    for (std::size_t l = 0; l < net.layer_count(); ++l) {
                        const Matrix block = pg.preact_grads[l] * trace.inputs[l].transpose();
                        grads.col(c).segment(off, block.size()) = linalg::vec(block);
                        off += block.size();
                    }
                }
                f.selfadjointView<Eigen::Lower>().rankUpdate(grads.leftCols(n));
                drawn += static_cast<std::size_t>(n);
            }
            Matrix full = f.selfadjointView<Eigen::Lower>();
            return (full / static_cast<double>(drawn) - g).norm() / g_norm;
        };
        const double small = accumulate(config.n_small);
        const double large = accumulate(4 * config.n_small);
        worst_small = std::max(worst_small, small);
        sum_sq_small += small * small;
        sum_sq_large += large * large;
    }
    const double ratio = std::sqrt(sum_sq_large / sum_sq_small);
    const std::string n = std::to_string(config.n_small);
    return {upper_check("gnh-fisher error at N=" + n, worst_small, config.error_tol,
                        "worst of " + std::to_string(config.replicates) + " replicates"),
            band_check("gnh-fisher rms error ratio 4N/N", ratio, config.ratio_lo, config.ratio_hi,
                       "1/sqrt(N) predicts 0.5")};
}

CheckResult check_kfac_single_sample(std::uint64_t seed, double tol) {
    Rng rng(derive_seed(seed, 0xA));
    const auto net = FeedForwardNet::random({4, 6, 5, 3}, Activation::Gelu, rng(), 1.5);
    const auto one = random_data(rng, 1, 4, 3);
    EstimateOptions opts;
    opts.seed = rng();
    const KfacFactors factors = kfac_factors(net, one, opts);

    Rng label_rng(derive_seed(opts.seed, 0));
    const int label = sample_pseudo_gradient(net, forward(net, one.x(0)), label_rng).label;
    const Vector grad = label_gradient(net, one.x(0), label);

    double worst = 0.0;
    for (const auto& f : factors.layers) {
        const Vector b = grad.segment(net.offset(f.layer), net.layer(f.layer).param_count());
        worst = std::max(worst, (kron(f.a, f.s) - b * b.transpose()).cwiseAbs().maxCoeff());
    }
    return upper_check("k-fac single-sample exactness", worst, tol, "every layer of a 3-layer net");
}

CheckResult check_gradient_fd(std::uint64_t seed, int triples, double tol) {
    Rng rng(derive_seed(seed, 0x6));
    const Activation acts[] = {Activation::Tanh, Activation::Gelu, Activation::Identity};
    double worst = 0.0;
    for (int t = 0; t < triples; ++t) {
        std::vector<int> widths{uniform_int(rng, 2, 6)};
        const int hidden = uniform_int(rng, 1, 2);
        for (int h = 0; h < hidden; ++h) widths.push_back(uniform_int(rng, 2, 6));
        widths.push_back(uniform_int(rng, 2, 5));
        const auto net = FeedForwardNet::random(widths, acts[uniform_int(rng, 0, 2)], rng(), 1.5);
        const auto sample = random_data(rng, 1, widths.front(), widths.back());
        const Vector x = sample.x(0);
        const int y = sample.y(0);

        const Vector bp = flatten(backward(net, forward(net, x), y));
        const Vector theta = net.flatten();
        Vector fd(theta.size());
        FeedForwardNet probe = net;
        constexpr double h = 1e-5;
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            Vector tp = theta;
            tp[i] += h;
            probe.assign(tp);
            const double up = cross_entropy(forward(probe, x).logits, y);
            tp[i] -= 2 * h;
            probe.assign(tp);
            const double down = cross_entropy(forward(probe, x).logits, y);
            fd[i] = (up - down) / (2 * h);
        }
        worst = std::max(worst, (bp - fd).norm() / std::max(fd.norm(), 1e-12));
    }
    return upper_check("backprop vs finite differences", worst, tol, std::to_string(triples) + " triples");
}

CheckResult check_hvp_columns(std::uint64_t seed, double tol) {
    Rng rng(derive_seed(seed, 0x7));
    double worst = 0.0;

    // Linear-softmax layer: H = mean (a a^T) (x) (diag(pi) - pi pi^T).
    {
        const auto net = FeedForwardNet::random({6, 4}, Activation::Identity, rng(), 1.0);
        const auto data = random_data(rng, 10, 6, 4);
        const Eigen::Index p = net.param_count();
        Matrix h = Matrix::Zero(p, p);
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto trace = forward(net, data.x(i));
            const Matrix curv = Matrix(trace.probs.asDiagonal()) - trace.probs * trace.probs.transpose();
            h += kron(trace.inputs[0] * trace.inputs[0].transpose(), curv);
        }
        h /= static_cast<double>(data.size());
        for (Eigen::Index j = 0; j < p; ++j) {
            const Vector col = hessian_vector_product(net, data, Vector::Unit(p, j));
            worst = std::max(worst, (col - h.col(j)).norm() / std::max(h.col(j).norm(), 1e-12));
        }
        const Vector v = linalg::vec(random_matrix(rng, p, 1));
        worst = std::max(worst, (hessian_vector_product(net, data, v) - h * v).norm() / (h * v).norm());
    }

    // Small tanh net: second differences of the loss.
    {
        const auto net = FeedForwardNet::random({3, 4, 3}, Activation::Tanh, rng(), 1.5);
        const auto data = random_data(rng, 5, 3, 3);
        const Vector theta = net.flatten();
        const Eigen::Index p = theta.size();
        FeedForwardNet probe = net;
        auto loss_at = [&](const Vector& t) {
            probe.assign(t);
            return dataset_loss(probe, data);
        };
        constexpr double step = 1e-4;
        for (Eigen::Index j = 0; j < p; ++j) {
            Vector oracle(p);
            for (Eigen::Index i = 0; i < p; ++i) {
                Vector t = theta;
                t[i] += step;
                t[j] += step;
                const double pp = loss_at(t);
                t[j] -= 2 * step;
                const double pm = loss_at(t);
                t[i] -= 2 * step;
                const double mm = loss_at(t);
                t[j] += 2 * step;
                const double mp = loss_at(t);
                oracle[i] = (pp - pm - mp + mm) / (4 * step * step);
            }
            const Vector col = hessian_vector_product(net, data, Vector::Unit(p, j));
            worst = std::max(worst, (col - oracle).norm() / std::max(oracle.norm(), 1e-12));
        }
    }
    return upper_check("hvp vs explicit hessian columns", worst, tol, "linear-softmax analytic + tanh second differences");
}

CheckResult check_constraint_bound(std::uint64_t seed, std::size_t epochs, double gamma, double slack) {
    Rng rng(derive_seed(seed, 0x9));
    const auto net = FeedForwardNet::random({6, 10, 4}, Activation::Tanh, rng(), 1.5);
    const auto cap = random_data(rng, 40, 6, 4);
    const auto edit = random_data(rng, 20, 6, 4);
    const CurvatureModel gnh = exact_gnh(net, cap);
    const double sigma_max = linalg::sym_eig(std::get<GnhModel>(gnh.data).dense.matrix).values[0];

    EditConfig config;
    config.gamma = gamma;
    config.optimizer = OptimizerKind::Sgd;
    config.learning_rate = 0.5;
    config.max_steps = epochs;
    config.batch_size = edit.size();
    config.early_stop_loss = 0.0;
    config.joint = true;
    const auto result = edit_batch(net, edit, gnh, config);

    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& s : result.telemetry.steps) {
        if (s.delta_norm_sq == 0.0) {
            worst = std::max(worst, 0.0);
            continue;
        }
        worst = std::max(worst, (s.quadratic_form - s.lambda_gamma * s.delta_norm_sq) / (sigma_max * s.delta_norm_sq));
    }
    const bool all_steps = result.telemetry.steps.size() == epochs && result.telemetry.rebuilds.empty();
    auto c = upper_check("constraint bound d^T G d <= lambda_gamma |d|^2", all_steps ? worst : INFINITY, slack,
                         std::to_string(result.telemetry.steps.size()) + " logged steps, excess relative to sigma_max");
    return c;
}

namespace {

struct Suite {
    const VerifyOptions& options;
    VerifyReport report;

    double tol(double def) const { return options.tolerance.value_or(def); }
    void add(CheckResult c) { report.checks.push_back(std::move(c)); }
    void add(std::vector<CheckResult> cs) {
        for (auto& c : cs) add(std::move(c));
    }
    // Run a check body, turning an unexpected exception into a failure entry.
    template <typename F>
    void guarded(const std::string& name, F&& body) {
        try {
            body();
        } catch (const std::exception& e) {
            CheckResult c;
            c.name = name;
            c.observed = std::numeric_limits<double>::quiet_NaN();
            c.detail = std::string("threw: ") + e.what();
            add(std::move(c));
        }
    }
};

void linalg_checks(Suite& s, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x1));
    s.guarded("dense projector symmetric idempotent", [&] {
        double worst = 0.0;
        for (int t = 0; t < 20; ++t) {
            const Eigen::Index n = uniform_int(rng, 1, 24);
            const auto eig = linalg::sym_eig(random_symmetric(rng, n));
            const auto k = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(n)));
            const Matrix p = linalg::dense_projector(eig, k);
            worst = std::max({worst, (p - p.transpose()).cwiseAbs().maxCoeff(), (p * p - p).cwiseAbs().maxCoeff()});
        }
        s.add(upper_check("dense projector symmetric idempotent", worst, s.tol(1e-9)));
    });
    s.guarded("energy cutoff monotone in gamma", [&] {
        std::size_t violations = 0;
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (int t = 0; t < 50; ++t) {
            Vector lambda(uniform_int(rng, 1, 30));
            for (auto& v : lambda) v = unit(rng) * unit(rng);
            std::sort(lambda.data(), lambda.data() + lambda.size(), std::greater<>());
            std::size_t prev = 0;
            for (double g = 0.05; g < 1.0; g += 0.05) {
                const auto k = linalg::energy_cutoff_index(lambda, g);
                if (k < prev) ++violations;
                prev = k;
            }
        }
        s.add(upper_check("energy cutoff monotone in gamma", static_cast<double>(violations), 0.0, "violation count"));
    });
    s.guarded("kron cutoff minimal retained set", [&] {
        std::size_t violations = 0;
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (int t = 0; t < 50; ++t) {
            linalg::KronSpectrum spec{Vector(uniform_int(rng, 1, 8)), Vector(uniform_int(rng, 1, 8))};
            for (auto& v : spec.lambda_out) v = unit(rng);
            for (auto& v : spec.lambda_in) v = unit(rng);
            std::sort(spec.lambda_out.data(), spec.lambda_out.data() + spec.lambda_out.size(), std::greater<>());
            std::sort(spec.lambda_in.data(), spec.lambda_in.data() + spec.lambda_in.size(), std::greater<>());
            const double gamma = 0.05 + 0.9 * unit(rng);
            const auto cut = linalg::kron_energy_cutoff(spec, gamma);
            const Matrix grid = spec.grid();
            std::vector<double> sorted(grid.data(), grid.data() + grid.size());
            std::sort(sorted.begin(), sorted.end(), std::greater<>());
            const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
            const double top = std::accumulate(sorted.begin(), sorted.begin() + static_cast<long>(cut.retained), 0.0);
            const double below = cut.retained == 0 ? 0.0 : top - sorted[cut.retained - 1];
            if (top < gamma * total * (1 - 1e-12) || (cut.retained > 0 && below >= gamma * total)) ++violations;
            if (static_cast<std::size_t>(grid.size()) - static_cast<std::size_t>(cut.mask.sum()) != cut.retained) ++violations;
        }
        s.add(upper_check("kron cutoff minimal retained set", static_cast<double>(violations), 0.0, "violation count"));
    });
    s.guarded("sym_eig reconstruction", [&] {
        double worst = 0.0;
        for (int t = 0; t < 100; ++t) {
            const Matrix m = random_symmetric(rng, uniform_int(rng, 1, 32));
            const auto e = linalg::sym_eig(m);
            worst = std::max(worst, (e.vectors * e.values.asDiagonal() * e.vectors.transpose() - m).norm() / m.norm());
        }
        s.add(upper_check("sym_eig reconstruction", worst, s.tol(1e-10), "relative to ||M||_F, 100 matrices"));
    });
}

void network_checks(Suite& s, std::uint64_t seed) {
    s.guarded("backprop vs finite differences", [&] { s.add(check_gradient_fd(seed, 20, s.tol(1e-5))); });
    s.guarded("jacobian consistency", [&] {
        Rng rng(derive_seed(seed, 0x2));
        double worst = 0.0;
        for (int t = 0; t < 10; ++t) {
            const auto net = FeedForwardNet::random({5, 7, 4}, Activation::Gelu, rng(), 1.5);
            const auto one = random_data(rng, 1, 5, 4);
            const Vector bp = flatten(backward(net, forward(net, one.x(0)), one.y(0)));
            const Vector viaj = -label_gradient(net, one.x(0), one.y(0));
            worst = std::max(worst, (bp - viaj).cwiseAbs().maxCoeff());
        }
        s.add(upper_check("jacobian consistency", worst, s.tol(1e-8)));
    });
    s.guarded("hvp symmetry", [&] {
        Rng rng(derive_seed(seed, 0x3));
        double worst = 0.0;
        for (int t = 0; t < 5; ++t) {
            const auto net = FeedForwardNet::random({4, 6, 3}, Activation::Tanh, rng(), 1.5);
            const auto data = random_data(rng, 8, 4, 3);
            const Vector u = linalg::vec(random_matrix(rng, net.param_count(), 1));
            const Vector v = linalg::vec(random_matrix(rng, net.param_count(), 1));
            const Vector hu = hessian_vector_product(net, data, u);
            const Vector hv = hessian_vector_product(net, data, v);
            const double h_est = std::max(hu.norm() / u.norm(), hv.norm() / v.norm());
            worst = std::max(worst, std::abs(v.dot(hu) - u.dot(hv)) / (u.norm() * v.norm() * h_est));
        }
        s.add(upper_check("hvp symmetry", worst, s.tol(1e-6), "relative to |u||v||H|"));
    });
    s.guarded("hvp vs explicit hessian columns", [&] { s.add(check_hvp_columns(seed, s.tol(1e-4))); });
    s.guarded("forward and pseudo-gradient determinism", [&] {
        const auto net = FeedForwardNet::random({4, 5, 3}, Activation::Relu, seed, 1.0);
        Rng rng(seed);
        const auto one = random_data(rng, 1, 4, 3);
        std::size_t mismatches = 0;
        for (int rep = 0; rep < 2; ++rep) {
            const auto a = forward(net, one.x(0));
            const auto b = forward(net, one.x(0));
            Rng r1(derive_seed(seed, 5)), r2(derive_seed(seed, 5));
            const auto pa = sample_pseudo_gradient(net, a, r1);
            const auto pb = sample_pseudo_gradient(net, b, r2);
            if (a.logits != b.logits || pa.label != pb.label) ++mismatches;
            for (std::size_t l = 0; l < pa.preact_grads.size(); ++l)
                if (pa.preact_grads[l] != pb.preact_grads[l]) ++mismatches;
        }
        s.add(upper_check("forward and pseudo-gradient determinism", static_cast<double>(mismatches), 0.0, "mismatch count"));
    });
}

void curvature_checks(Suite& s, std::uint64_t seed) {
    s.guarded("gnh nullspace containment", [&] { s.add(check_nullspace_containment(seed, 20, s.tol(1e-8))); });
    s.guarded("gnh-fisher", [&] {
        FisherRateConfig cfg;
        cfg.n_small = 5000;
        cfg.replicates = 8;
        cfg.error_tol = s.tol(0.25);
        s.add(check_fisher_rate(seed, cfg));
    });
    s.guarded("linear model hessian equals gnh", [&] {
        Rng rng(derive_seed(seed, 0x4));
        const auto net = FeedForwardNet::random({5, 4}, Activation::Identity, rng(), 1.0);
        const auto data = random_data(rng, 12, 5, 4);
        const Matrix h = std::get<ExactHessianModel>(exact_hessian(net, data).data).dense.matrix;
        const Matrix g = std::get<GnhModel>(exact_gnh(net, data).data).dense.matrix;
        s.add(upper_check("linear model hessian equals gnh", (h - g).norm() / g.norm(), s.tol(1e-6), "relative Frobenius"));
    });
    s.guarded("gnh positive semidefinite", [&] {
        Rng rng(derive_seed(seed, 0x5));
        const auto net = FeedForwardNet::random({4, 6, 3}, Activation::Relu, rng(), 1.5);
        const auto data = random_data(rng, 10, 4, 3);
        const Matrix g = std::get<GnhModel>(exact_gnh(net, data).data).dense.matrix;
        const Eigen::SelfAdjointEigenSolver<Matrix> es(g);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        s.add(upper_check("gnh positive semidefinite", std::max(0.0, -lo) / hi, s.tol(1e-10), "-lambda_min / lambda_max"));
    });
    s.guarded("k-fac single-sample exactness", [&] { s.add(check_kfac_single_sample(seed, s.tol(1e-10))); });
    s.guarded("streaming aggregation equals one-shot", [&] {
        Rng rng(derive_seed(seed, 0x8));
        const auto net = FeedForwardNet::random({5, 6, 4}, Activation::Tanh, rng(), 1.5);
        const auto data = random_data(rng, 20, 5, 4);
        EstimateOptions opts;
        opts.seed = rng();
        const auto whole = kfac_factors(net, data, opts);
        KfacFactors acc;
        const std::size_t cuts[] = {0, 7, 12, 20};
        for (int c = 0; c < 3; ++c) {
            EstimateOptions o = opts;
            o.index_offset = cuts[c];
            acc = aggregate_factors(acc, kfac_factors(net, data.slice(cuts[c], cuts[c + 1]), o));
        }
        double worst = 0.0;
        for (std::size_t l = 0; l < whole.layers.size(); ++l)
            worst = std::max({worst, (whole.layers[l].a - acc.layers[l].a).cwiseAbs().maxCoeff(),
                              (whole.layers[l].s - acc.layers[l].s).cwiseAbs().maxCoeff()});
        s.add(upper_check("streaming aggregation equals one-shot", worst, s.tol(1e-12), "3 uneven chunks"));
    });
    s.guarded("bregman", [&] { s.add(check_bregman_quadratic(seed, 10, s.tol(5e-2), 3.0)); });
}

void projection_checks(Suite& s, std::uint64_t seed) {
    s.guarded("kron projector equivalence",
              [&] { s.add(check_kron_equivalence(seed, 50, s.tol(1e-9), s.options.kron_apply)); });
    s.guarded("projector symmetric idempotent (all kinds)", [&] {
        Rng rng(derive_seed(seed, 0xE));
        const auto net = FeedForwardNet::random({5, 6, 4}, Activation::Tanh, rng(), 1.5);
        const auto cap = random_data(rng, 30, 5, 4);
        EstimateOptions opts;
        opts.seed = rng();
        double worst = 0.0;
        for (auto kind : {CurvatureKind::ExactHessian, CurvatureKind::Gnh, CurvatureKind::Kfac, CurvatureKind::Ekfac,
                          CurvatureKind::ActivationCov}) {
            const auto model = estimate_curvature(kind, net, cap, opts);
            for (bool joint : {false, true}) {
                const auto cache = build_projector(model, 0.8, {joint});
                for (int probe = 0; probe < 5; ++probe) {
                    const auto u = random_like(rng, net);
                    const auto v = random_like(rng, net);
                    const auto pu = project(cache, u);
                    const auto pv = project(cache, v);
                    const double scale = norm(u) * norm(v);
                    worst = std::max({worst, std::abs(dot(u, pv) - dot(pu, v)) / scale,
                                      norm(minus(project(cache, pv), pv)) / norm(v)});
                }
            }
        }
        s.add(upper_check("projector symmetric idempotent (all kinds)", worst, s.tol(1e-9)));
    });
    s.guarded("activation-cov projector kills capability inputs", [&] {
        Rng rng(derive_seed(seed, 0x11));
        const auto net = FeedForwardNet::random({7, 8, 4}, Activation::Tanh, rng(), 1.5);
        const auto cap = random_data(rng, 3, 7, 4);
        const auto cache = build_projector(activation_covariance(net, cap), 1.0 - 1e-9);
        double worst = 0.0;
        for (int probe = 0; probe < 10; ++probe) {
            const auto q = project(cache, random_like(rng, net));
            for (std::size_t i = 0; i < cap.size(); ++i) {
                const auto trace = forward(net, cap.x(i));
                for (std::size_t l = 0; l < net.layer_count(); ++l) {
                    const double denom = q[l].norm() * trace.inputs[l].norm();
                    if (denom > 0.0) worst = std::max(worst, (q[l] * trace.inputs[l]).norm() / denom);
                }
            }
        }
        s.add(upper_check("activation-cov projector kills capability inputs", worst, s.tol(1e-8)));
    });
    s.guarded("constraint bound", [&] { s.add(check_constraint_bound(seed, 25, 0.9, s.tol(1e-9))); });
}

void editor_checks(Suite& s, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x12));
    const auto net = FeedForwardNet::random({5, 6, 4}, Activation::Tanh, rng(), 1.5);
    const auto cap = random_data(rng, 40, 5, 4);
    const auto edit = random_data(rng, 12, 5, 4);
    EstimateOptions opts;
    opts.seed = rng();
    const auto model = kfac_estimate(net, cap, opts);

    auto fixed_point = [&](OptimizerKind opt, const char* name) {
        s.guarded(name, [&] {
            EditConfig config;
            config.gamma = 0.8;
            config.optimizer = opt;
            config.learning_rate = opt == OptimizerKind::Sgd ? 0.2 : 0.01;
            config.max_steps = 5;
            config.batch_size = 4;
            config.early_stop_loss = 0.0;
            const auto result = edit_batch(net, edit, model, config);
            LayerGradients delta = net.zeros_like();
            for (std::size_t l = 0; l < net.layer_count(); ++l) delta[l] = result.net.layer(l).weights - net.layer(l).weights;
            const auto cache = build_projector(model, config.gamma);
            const double n = norm(delta);
            s.add(upper_check(name, n > 0.0 ? norm(minus(project(cache, delta), delta)) / n : 0.0, s.tol(1e-9),
                              "relative to |delta|"));
        });
    };
    fixed_point(OptimizerKind::Sgd, "sgd update stays in nullspace");
    fixed_point(OptimizerKind::Adam, "adam double projection stays in nullspace");

    s.guarded("untracked layers bit-identical", [&] {
        EditConfig config;
        config.tracked_layers = {1};
        config.learning_rate = 0.01;
        config.max_steps = 3;
        config.early_stop_loss = 0.0;
        const auto result = edit_batch(net, edit, kfac_estimate(net, cap, [&] {
                                           auto o = opts;
                                           o.layers = {1};
                                           return o;
                                       }()),
                                       config);
        const bool same = result.net.layer(0).weights == net.layer(0).weights;
        const bool moved = result.net.layer(1).weights != net.layer(1).weights;
        s.add(upper_check("untracked layers bit-identical", same && moved ? 0.0 : 1.0, 0.0,
                          "layer 0 untouched, layer 1 edited"));
    });
    s.guarded("edit determinism", [&] {
        EditConfig config;
        config.max_steps = 3;
        config.batch_size = 5;
        config.early_stop_loss = 0.0;
        config.seed = 99;
        const auto a = edit_batch(net, edit, model, config);
        const auto b = edit_batch(net, edit, model, config);
        std::size_t mismatches = 0;
        for (std::size_t l = 0; l < net.layer_count(); ++l)
            if (a.net.layer(l).weights != b.net.layer(l).weights) ++mismatches;
        for (std::size_t i = 0; i < a.telemetry.steps.size(); ++i)
            if (a.telemetry.steps[i].batch_loss != b.telemetry.steps[i].batch_loss ||
                a.telemetry.steps[i].quadratic_form != b.telemetry.steps[i].quadratic_form)
                ++mismatches;
        s.add(upper_check("edit determinism", static_cast<double>(mismatches), 0.0, "mismatch count"));
    });
}

void harness_checks(Suite& s, std::uint64_t seed) {
    s.guarded("idx round trip", [&] {
        Rng rng(derive_seed(seed, 0x13));
        LabeledDataset d;
        d.inputs.resize(5, 12);
        for (Eigen::Index j = 0; j < 12; ++j)
            for (Eigen::Index i = 0; i < 5; ++i) d.inputs(i, j) = uniform_int(rng, 0, 255) / 255.0;
        d.labels = {0, 3, 9, 1, 7};
        d.class_count = 10;
        const auto dir = std::filesystem::temp_directory_path() / ("crispe-verify-" + std::to_string(rng()));
        std::filesystem::create_directories(dir);
        write_idx(d, dir / "img", dir / "lab", 3, 4);
        const auto back = load_idx(dir / "img", dir / "lab");
        std::filesystem::remove_all(dir);
        const bool same = back.inputs == d.inputs && back.labels == d.labels;
        s.add(upper_check("idx round trip", same ? 0.0 : 1.0, 0.0, "bit-exact"));
    });
    s.guarded("crvc and crsp round trip", [&] {
        Rng rng(derive_seed(seed, 0x14));
        const auto net = FeedForwardNet::random({4, 5, 3}, Activation::Gelu, rng(), 1.0);
        const auto cap = random_data(rng, 15, 4, 3);
        EstimateOptions opts;
        opts.seed = rng();
        std::size_t mismatches = 0;
        for (auto kind : {CurvatureKind::ExactHessian, CurvatureKind::Gnh, CurvatureKind::Kfac, CurvatureKind::Ekfac,
                          CurvatureKind::ActivationCov}) {
            const auto bytes = encode_curvature(estimate_curvature(kind, net, cap, opts));
            if (encode_curvature(decode_curvature(bytes)) != bytes) ++mismatches;
        }
        const auto ck = encode_checkpoint(net);
        if (encode_checkpoint(decode_checkpoint(ck)) != ck) ++mismatches;
        s.add(upper_check("crvc and crsp round trip", static_cast<double>(mismatches), 0.0, "mismatch count"));
    });
    s.guarded("sweep csv deterministic", [&] {
        const auto data = synthetic_experiment(seed, 120, 60, 4, 3);
        const auto net = FeedForwardNet::random({4, 8, 3}, Activation::Tanh, seed, 1.0);
        SweepOptions opts;
        opts.kinds = {"none", "kfac", "actcov"};
        opts.k_grid = {0.5, 2.0};
        opts.edit.max_steps = 2;
        opts.curvature_examples = 50;
        opts.seed = seed;
        const auto a = sweep_csv(sweep_gamma(net, data, opts), opts);
        const auto b = sweep_csv(sweep_gamma(net, data, opts), opts);
        s.add(upper_check("sweep csv deterministic", a == b ? 0.0 : 1.0, 0.0, "byte comparison"));
    });
}

} // namespace

VerifyReport verify(const VerifyOptions& options) {
    Suite s{options, {}};
    linalg_checks(s, options.seed);
    network_checks(s, options.seed);
    curvature_checks(s, options.seed);
    projection_checks(s, options.seed);
    editor_checks(s, options.seed);
    harness_checks(s, options.seed);
    return s.report;
}

} // namespace crispe

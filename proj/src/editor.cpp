#include "crispe/editor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crispe/error.hpp"

namespace crispe {

const char* to_string(OptimizerKind kind) noexcept {
    return kind == OptimizerKind::Sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "sgd") return OptimizerKind::Sgd;
    if (name == "adam") return OptimizerKind::Adam;
    fail(ErrorKind::Validation, "optimizer: unknown optimizer '" + name + "' (expected sgd or adam)");
}

void EditConfig::validate() const {
    auto check = [](bool ok, const std::string& field, const std::string& why) {
        require(ok, ErrorKind::Validation, field + ": " + why);
    };
    check(gamma > 0.0 && gamma < 1.0, "gamma", "must lie in (0, 1), got " + std::to_string(gamma));
    check(learning_rate > 0.0, "learning_rate", "must be positive");
    check(batch_size >= 1, "batch_size", "must be at least 1");
    check(early_stop_loss >= 0.0, "early_stop_loss", "must be nonnegative");
    check(drift_threshold > 0.0, "drift_threshold", "must be positive");
    check(chunk_size >= 1, "chunk_size", "must be at least 1");
    check(mc_samples >= 1, "mc_samples", "must be at least 1");
    check(beta1 >= 0.0 && beta1 < 1.0, "beta1", "must lie in [0, 1)");
    check(beta2 >= 0.0 && beta2 < 1.0, "beta2", "must lie in [0, 1)");
    check(adam_eps > 0.0, "adam_eps", "must be positive");
}

OptimizerState init_optimizer(const FeedForwardNet& net) {
    OptimizerState state;
    for (const auto& layer : net.layers()) {
        state.first.push_back(Matrix::Zero(layer.weights.rows(), layer.weights.cols()));
        state.second.push_back(Matrix::Zero(layer.weights.rows(), layer.weights.cols()));
    }
    return state;
}

LayerGradients optimizer_step(OptimizerState& state, const LayerGradients& q_proj, const EditConfig& config,
                              const ProjectorCache* cache) {
    LayerGradients delta = q_proj;
    if (config.optimizer == OptimizerKind::Sgd) {
        for (auto& b : delta.blocks) b *= -config.learning_rate;
        return delta;
    }
    require(state.first.size() == q_proj.size(), ErrorKind::State, "optimizer state does not match gradient layout");
    ++state.t;
    const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    for (std::size_t l = 0; l < q_proj.size(); ++l) {
        const Matrix& g = q_proj[l];
        state.first[l] = config.beta1 * state.first[l] + (1.0 - config.beta1) * g;
        state.second[l] = config.beta2 * state.second[l] + (1.0 - config.beta2) * g.cwiseAbs2();
        const auto m_hat = state.first[l].array() / correction1;
        const auto v_hat = state.second[l].array() / correction2;
        delta[l] = (-config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps)).matrix();
    }
    if (cache != nullptr) delta = project(*cache, delta);
    return delta;
}

bool drift_check(const Vector& theta_now, const Vector& theta_ref, double threshold) {
    require(theta_now.size() == theta_ref.size(), ErrorKind::Dimension, "drift_check: parameter vectors differ in length");
    const double diff = (theta_now - theta_ref).norm();
    const double ref = theta_ref.norm();
    if (ref == 0.0) return diff > 0.0;
    return diff / ref > threshold;
}

Vector tracked_parameters(const FeedForwardNet& net, const std::vector<std::size_t>& layers) {
    Eigen::Index p = 0;
    for (auto l : layers) p += net.layer(l).param_count();
    Vector out(p);
    Eigen::Index off = 0;
    for (auto l : layers) {
        out.segment(off, net.layer(l).param_count()) = linalg::vec(net.layer(l).weights);
        off += net.layer(l).param_count();
    }
    return out;
}

namespace {

bool refreshable(CurvatureKind kind, const EditConfig& config) {
    return (kind != CurvatureKind::Kfac && kind != CurvatureKind::Ekfac) || config.refresh_kfac;
}

LayerGradients batch_gradient(const FeedForwardNet& net, const LabeledDataset& data,
                              std::span<const std::size_t> indices, double& loss) {
    LayerGradients total = net.zeros_like();
    loss = 0.0;
    for (auto i : indices) {
        const ForwardTrace trace = forward(net, data.x(i));
        loss += cross_entropy(trace.logits, data.y(i));
        const auto g = backward(net, trace, data.y(i));
        for (std::size_t l = 0; l < g.size(); ++l) total[l] += g[l];
    }
    const double inv = 1.0 / static_cast<double>(indices.size());
    for (auto& b : total.blocks) b *= inv;
    loss *= inv;
    return total;
}

} // namespace

EditResult edit_batch(const FeedForwardNet& net, const LabeledDataset& edit, const CurvatureModel& curvature,
                      const EditConfig& config, const LabeledDataset* cap, const EpochObserver& observer,
                      const StepObserver& step_observer) {
    config.validate();
    require(!edit.empty(), ErrorKind::Validation, "edit_batch: empty edit set");
    require(edit.dim() == net.input_width(), ErrorKind::Dimension, "edit_batch: edit inputs do not match the network");
    const auto tracked = resolve_layers(net, config.tracked_layers);
    require(curvature.layers() == tracked, ErrorKind::Validation,
            "edit_batch: curvature model does not cover exactly the tracked layers");
    for (const auto& s : curvature.shapes())
        require(s.d_out == net.layer(s.layer).weights.rows() && s.d_in == net.layer(s.layer).weights.cols(),
                ErrorKind::Validation, "edit_batch: curvature shape does not match layer " + std::to_string(s.layer));

    const ProjectorOptions popts{config.joint};
    ProjectorCache cache = build_projector(curvature, config.gamma, popts);

    EditResult result{net, {}};
    result.telemetry.initial_lambda_gamma = max_lambda_gamma(cache);
    double retained = tracked.empty() ? 0.0 : 1.0;
    for (auto l : tracked) retained = std::min(retained, residual_energy(cache, l).retained_fraction);
    result.telemetry.initial_retained_fraction = retained;

    const FeedForwardNet base = net;
    Vector theta_ref = tracked_parameters(net, tracked);
    OptimizerState state = init_optimizer(net);
    const bool adam_reproject = config.optimizer == OptimizerKind::Adam && config.double_projection;

    std::vector<std::size_t> order(edit.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, 0x5EED));

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.max_steps; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            StepRecord rec;
            rec.epoch = epoch;
            rec.step = step;
            rec.lambda_gamma = max_lambda_gamma(cache);
            const LayerGradients grad =
                batch_gradient(result.net, edit, std::span<const std::size_t>(order).subspan(start, stop - start), rec.batch_loss);
            const LayerGradients projected = project(cache, grad);
            for (auto l : tracked) {
                const double n = grad[l].norm();
                rec.projected_fraction.push_back(n > 0.0 ? projected[l].norm() / n : 0.0);
            }
            const LayerGradients delta = optimizer_step(state, projected, config, adam_reproject ? &cache : nullptr);
            for (auto l : tracked) result.net.layer(l).weights += delta[l];

            LayerGradients moved = result.net.zeros_like();
            for (auto l : tracked) {
                moved[l] = result.net.layer(l).weights - base.layer(l).weights;
                rec.delta_norm_sq += moved[l].squaredNorm();
            }
            rec.quadratic_form = quadratic_form(curvature, moved);
            if (step_observer) step_observer(result.net, rec);
            result.telemetry.steps.push_back(std::move(rec));
            ++step;

            const Vector theta_now = tracked_parameters(result.net, tracked);
            if (cap != nullptr && refreshable(curvature.kind(), config) && drift_check(theta_now, theta_ref, config.drift_threshold)) {
                const double drift = (theta_now - theta_ref).norm() / std::max(theta_ref.norm(), 1e-300);
                EstimateOptions eopts;
                eopts.layers = tracked;
                eopts.mc_samples = config.mc_samples;
                eopts.seed = derive_seed(config.seed, result.telemetry.rebuilds.size() + 1);
                eopts.empirical_fisher = config.empirical_fisher;
                cache = build_projector(estimate_curvature(curvature.kind(), result.net, *cap, eopts), config.gamma, popts);
                theta_ref = theta_now;
                result.telemetry.rebuilds.push_back({step, drift});
            }
        }
        const EpochRecord er{epoch, dataset_loss(result.net, edit)};
        result.telemetry.epochs.push_back(er);
        if (observer) observer(result.net, er);
        if (er.edit_loss < config.early_stop_loss) break;
    }
    return result;
}

std::vector<LabeledDataset> make_chunks(const LabeledDataset& data, std::size_t chunk_size) {
    require(chunk_size >= 1, ErrorKind::Validation, "chunk_size: must be at least 1");
    std::vector<LabeledDataset> out;
    for (std::size_t start = 0; start < data.size(); start += chunk_size) out.push_back(data.slice(start, start + chunk_size));
    return out;
}

SequentialResult edit_sequential(const FeedForwardNet& net, const std::vector<LabeledDataset>& chunks,
                                 const KfacFactors& initial, const EditConfig& config) {
    config.validate();
    require(!chunks.empty(), ErrorKind::Validation, "edit_sequential: no edit chunks");
    const auto tracked = resolve_layers(net, config.tracked_layers);

    SequentialResult out;
    out.factors = initial;
    FeedForwardNet current = net;
    std::uint64_t seen = 0;
    for (std::size_t k = 0; k < chunks.size(); ++k) {
        const auto& chunk = chunks[k];
        if (chunk.empty()) {
            out.nets.push_back(current);
            continue;
        }
        EditConfig chunk_config = config;
        chunk_config.seed = derive_seed(config.seed, 1000 + k);
        const CurvatureModel model{KfacModel{out.factors}};
        auto edited = edit_batch(current, chunk, model, chunk_config);
        current = std::move(edited.net);

        const std::size_t step_base = out.telemetry.steps.size();
        for (auto& s : edited.telemetry.steps) {
            s.step += step_base;
            out.telemetry.steps.push_back(std::move(s));
        }
        for (auto& e : edited.telemetry.epochs) out.telemetry.epochs.push_back(e);
        if (k == 0) {
            out.telemetry.initial_lambda_gamma = edited.telemetry.initial_lambda_gamma;
            out.telemetry.initial_retained_fraction = edited.telemetry.initial_retained_fraction;
        }

        EstimateOptions eopts;
        eopts.layers = tracked;
        eopts.mc_samples = config.mc_samples;
        eopts.seed = derive_seed(config.seed, 2000 + k);
        eopts.empirical_fisher = config.empirical_fisher;
        eopts.index_offset = seen;
        out.factors = aggregate_factors(out.factors, kfac_factors(current, chunk, eopts));
        seen += chunk.size();
        out.nets.push_back(current);
    }
    return out;
}

} // namespace crispe

#include "crispe/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "crispe/error.hpp"

namespace crispe {

PretrainResult pretrain(const FeedForwardNet& net, const LabeledDataset& train, const LabeledDataset* test,
                        const PretrainConfig& config) {
    require(config.learning_rate > 0.0, ErrorKind::Validation, "learning_rate: must be positive");
    require(config.batch_size >= 1, ErrorKind::Validation, "batch_size: must be at least 1");
    require(!train.empty(), ErrorKind::Validation, "pretrain: empty training set");
    require(train.dim() == net.input_width(), ErrorKind::Dimension, "pretrain: inputs do not match the network");

    PretrainResult out{net, 0.0, std::numeric_limits<double>::quiet_NaN()};
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, 0x7A1));
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            LayerGradients total = out.net.zeros_like();
            for (std::size_t b = start; b < stop; ++b) {
                const auto trace = forward(out.net, train.x(order[b]));
                const auto g = backward(out.net, trace, train.y(order[b]));
                for (std::size_t l = 0; l < g.size(); ++l) total[l] += g[l];
            }
            const double scale = config.learning_rate / static_cast<double>(stop - start);
            for (std::size_t l = 0; l < total.size(); ++l) out.net.layer(l).weights -= scale * total[l];
        }
    }
    out.train_accuracy = accuracy(out.net, train);
    if (test != nullptr && !test->empty()) out.test_accuracy = accuracy(out.net, *test);
    return out;
}

ExperimentData make_experiment(const LabeledDataset& cap, const LabeledDataset& edit, std::uint64_t seed) {
    require(cap.dim() == edit.dim(), ErrorKind::Dimension, "capability and edit tasks have different input widths");
    auto [cap_train, cap_test] = split(cap, kHeldOutFraction, derive_seed(seed, 1));
    auto [edit_train, edit_test] = split(edit, kHeldOutFraction, derive_seed(seed, 2));
    return {std::move(cap_train), std::move(cap_test), std::move(edit_train), std::move(edit_test)};
}

ExperimentData synthetic_experiment(std::uint64_t seed, std::size_t n_cap, std::size_t n_edit, std::size_t dim,
                                    int classes) {
    const auto tasks = synthetic_tasks(seed, std::max(n_cap, n_edit), dim, classes);
    return make_experiment(head(tasks.task_a, n_cap), head(tasks.task_b, n_edit), seed);
}

LabeledDataset head(const LabeledDataset& data, std::size_t n) {
    if (n == 0 || n >= data.size()) return data;
    return data.slice(0, n);
}

double gamma_from_k(double k) { return 1.0 - std::pow(10.0, -k); }

std::vector<double> default_k_grid() { return {0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 7.0}; }

EditConfig sweep_edit_config() {
    EditConfig c;
    c.optimizer = OptimizerKind::Sgd;
    c.learning_rate = 0.05;
    c.refresh_kfac = true;
    return c;
}

std::uint64_t job_seed(const std::string& kind, double k, std::uint64_t base) {
    // FNV-1a over the kind name and the bit pattern of k.
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&](unsigned char c) {
        h ^= c;
        h *= 0x100000001b3ull;
    };
    for (unsigned char c : kind) mix(c);
    std::uint64_t bits = 0;
    std::memcpy(&bits, &k, sizeof bits);
    for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(bits >> (8 * i)));
    return derive_seed(base, h);
}

std::vector<TradeoffRecord> sweep_gamma(const FeedForwardNet& net0, const ExperimentData& data,
                                        const SweepOptions& options) {
    require(!options.kinds.empty(), ErrorKind::Validation, "sweep: no curvature kinds");
    require(!options.k_grid.empty(), ErrorKind::Validation, "sweep: empty k grid");
    for (double k : options.k_grid) {
        require(k > 0.0 && std::isfinite(k), ErrorKind::Validation, "k_grid: entries must be positive");
        const double g = gamma_from_k(k);
        require(g > 0.0 && g < 1.0, ErrorKind::Validation,
                "k_grid: k = " + std::to_string(k) + " gives gamma outside (0, 1) in double precision");
    }
    options.edit.validate();
    const LabeledDataset cap = head(data.cap_train, options.curvature_examples);
    const auto tracked = resolve_layers(net0, options.edit.tracked_layers);

    std::vector<TradeoffRecord> out;
    for (const auto& kind_name : options.kinds) {
        const bool control = kind_name == "none";
        const CurvatureKind kind = control ? CurvatureKind::Kfac : parse_curvature_kind(kind_name);
        EstimateOptions eopts;
        eopts.layers = tracked;
        eopts.mc_samples = options.edit.mc_samples;
        eopts.seed = job_seed(kind_name, 0.0, options.seed);
        eopts.empirical_fisher = options.edit.empirical_fisher;
        const CurvatureModel model = control ? zero_curvature(net0, tracked) : estimate_curvature(kind, net0, cap, eopts);

        for (double k : options.k_grid) {
            EditConfig config = options.edit;
            config.gamma = gamma_from_k(k);
            config.seed = job_seed(kind_name, k, options.seed);
            config.joint = kind == CurvatureKind::ExactHessian || options.edit.joint;

            const auto t0 = std::chrono::steady_clock::now();
            const auto result = edit_batch(net0, data.edit_train, model, config, control ? nullptr : &cap);
            const auto t1 = std::chrono::steady_clock::now();

            TradeoffRecord r;
            r.curvature = kind_name;
            r.gamma = config.gamma;
            r.k = k;
            r.cap_acc = accuracy(result.net, data.cap_test);
            r.edit_acc = accuracy(result.net, data.edit_test);
            r.retained_energy = result.telemetry.initial_retained_fraction;
            r.rebuilds = result.telemetry.rebuilds.size();
            r.wall_ms = options.timing ? std::chrono::duration<double, std::milli>(t1 - t0).count() : 0.0;
            out.push_back(r);
        }
    }
    return out;
}

void write_sweep_csv(std::ostream& out, const std::vector<TradeoffRecord>& records, const SweepOptions& options) {
    const auto& e = options.edit;
    char line[512];
    std::snprintf(line, sizeof line,
                  "# optimizer=%s lr=%.6g steps=%zu batch_size=%zu early_stop=%.6g drift_threshold=%.6g "
                  "refresh_kfac=%d curvature_examples=%zu seed=%llu\n",
                  to_string(e.optimizer), e.learning_rate, e.max_steps, e.batch_size, e.early_stop_loss,
                  e.drift_threshold, e.refresh_kfac ? 1 : 0, options.curvature_examples, static_cast<unsigned long long>(options.seed));
    out << line << kSweepCsvHeader << '\n';
    for (const auto& r : records) {
        std::snprintf(line, sizeof line, "%s,%.10f,%.4g,%.6f,%.6f,%.6f,%zu,%.3f\n", r.curvature.c_str(), r.gamma, r.k,
                      r.cap_acc, r.edit_acc, r.retained_energy, r.rebuilds, r.wall_ms);
        out << line;
    }
}

std::string sweep_csv(const std::vector<TradeoffRecord>& records, const SweepOptions& options) {
    std::ostringstream s;
    write_sweep_csv(s, records, options);
    return s.str();
}

std::vector<CurvePoint> edit_curve(const FeedForwardNet& net0, const ExperimentData& data,
                                   const CurvatureModel& model, const EditConfig& config, std::size_t every) {
    require(every >= 1, ErrorKind::Validation, "edit_curve: evaluation interval must be at least 1");
    std::vector<CurvePoint> curve{{accuracy(net0, data.cap_test), accuracy(net0, data.edit_test)}};
    std::size_t seen = 0;
    auto on_step = [&](const FeedForwardNet& net, const StepRecord&) {
        if (++seen % every == 0) curve.push_back({accuracy(net, data.cap_test), accuracy(net, data.edit_test)});
    };
    edit_batch(net0, data.edit_train, model, config, nullptr, {}, on_step);
    return curve;
}

double cap_at_edit_accuracy(std::vector<CurvePoint> curve, double edit_acc) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (curve.empty()) return nan;
    std::stable_sort(curve.begin(), curve.end(),
                     [](const CurvePoint& a, const CurvePoint& b) { return a.edit_acc < b.edit_acc; });
    if (edit_acc < curve.front().edit_acc || edit_acc > curve.back().edit_acc) return nan;
    for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
        const auto& lo = curve[i];
        const auto& hi = curve[i + 1];
        if (edit_acc < lo.edit_acc || edit_acc > hi.edit_acc) continue;
        if (hi.edit_acc == lo.edit_acc) return std::max(lo.cap_acc, hi.cap_acc);
        const double t = (edit_acc - lo.edit_acc) / (hi.edit_acc - lo.edit_acc);
        return lo.cap_acc + t * (hi.cap_acc - lo.cap_acc);
    }
    return curve.back().cap_acc;
}

std::vector<CurvePoint> pareto_front(const std::vector<CurvePoint>& points) {
    std::vector<CurvePoint> sorted = points;
    std::sort(sorted.begin(), sorted.end(), [](const CurvePoint& a, const CurvePoint& b) {
        return a.edit_acc != b.edit_acc ? a.edit_acc > b.edit_acc : a.cap_acc > b.cap_acc;
    });
    std::vector<CurvePoint> front;
    for (const auto& p : sorted)
        if (front.empty() || p.cap_acc > front.back().cap_acc) front.push_back(p);
    std::reverse(front.begin(), front.end());
    return front;
}

CurvePoint best_near_edit_accuracy(const std::vector<CurvePoint>& curve, double edit_acc, double window) {
    CurvePoint best{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    for (const auto& p : curve) {
        if (std::abs(p.edit_acc - edit_acc) > window) continue;
        if (std::isnan(best.cap_acc) || p.cap_acc > best.cap_acc) best = p;
    }
    return best;
}

RetentionReport sequential_retention(const FeedForwardNet& net0, const ExperimentData& data, std::size_t chunks,
                                     std::size_t per_chunk, const EditConfig& config, std::size_t curvature_examples) {
    require(chunks >= 1 && per_chunk >= 1, ErrorKind::Validation, "sequential_retention: need at least one non-empty chunk");
    require(chunks * per_chunk <= data.edit_train.size(), ErrorKind::Validation,
            "sequential_retention: edit set has fewer than " + std::to_string(chunks * per_chunk) + " examples");
    config.validate();
    const auto tracked = resolve_layers(net0, config.tracked_layers);
    const auto edits = make_chunks(data.edit_train.slice(0, chunks * per_chunk), per_chunk);

    EstimateOptions eopts;
    eopts.layers = tracked;
    eopts.mc_samples = config.mc_samples;
    eopts.seed = derive_seed(config.seed, 0xCA9);
    eopts.empirical_fisher = config.empirical_fisher;
    const KfacFactors initial = kfac_factors(net0, head(data.cap_train, curvature_examples), eopts);

    RetentionReport report;
    const auto seq = edit_sequential(net0, edits, initial, config);
    report.chunk1_after_first = accuracy(seq.nets.front(), edits.front());
    report.chunk1_final = accuracy(seq.nets.back(), edits.front());
    report.cap_projected = accuracy(seq.nets.back(), data.cap_test);
    for (const auto& n : seq.nets) report.cap_per_chunk.push_back(accuracy(n, data.cap_test));

    // Plain sequential fine-tuning with the same per-chunk seeds.
    FeedForwardNet plain = net0;
    const CurvatureModel none = zero_curvature(net0, tracked);
    for (std::size_t k = 0; k < edits.size(); ++k) {
        EditConfig chunk_config = config;
        chunk_config.seed = derive_seed(config.seed, 1000 + k);
        plain = edit_batch(plain, edits[k], none, chunk_config).net;
    }
    report.cap_unprojected = accuracy(plain, data.cap_test);
    report.chunk1_final_unprojected = accuracy(plain, edits.front());
    return report;
}

} // namespace crispe

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Data come from the synthetic task pair; no image files are read.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "crispe/harness.hpp"
#include "crispe/serialize.hpp"
#include "crispe/verify.hpp"

using namespace crispe;

namespace {

constexpr std::uint64_t kSeed = 20240611;

// Tolerances and budgets.
constexpr double kKronTol = 1e-9;
constexpr double kNullspaceTol = 1e-8;
constexpr double kBregmanGapTol = 5e-2;
constexpr double kBregmanMinRatio = 3.0;
constexpr double kKfacSingleTol = 1e-10;
constexpr double kGradTol = 1e-5;
constexpr double kHvpTol = 1e-4;
constexpr double kConstraintSlack = 1e-9;
constexpr double kMatchWindow = 0.03;
constexpr double kKfacMargin = 0.10;
constexpr double kDominanceSlack = 0.02;
constexpr double kPretrainFloor = 0.95;
constexpr double kRetentionRatio = 0.8;
constexpr double kSequentialMargin = 0.10;

// Desk-scale task: d -> 64 -> m on the synthetic pair.
constexpr std::size_t kDim = 16;
constexpr int kClasses = 5;
constexpr int kHidden = 64;
constexpr std::size_t kCapExamples = 6000;
constexpr std::size_t kEditExamples = 1200;
constexpr std::size_t kEditUsed = 1000;

struct Outcome {
    bool passed = false;
    std::string detail;
};

int failures = 0;

void run(int id, const char* title, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= budget_s;
    const bool ok = o.passed && in_time;
    if (!ok) ++failures;
    std::printf("%s %2d %s: %s [%.1f s, budget %.0f s%s]\n", ok ? "PASS" : "FAIL", id, title, o.detail.c_str(), secs,
                budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Outcome from_checks(const std::vector<CheckResult>& checks) {
    Outcome o{true, ""};
    for (const auto& c : checks) {
        o.passed = o.passed && c.passed;
        if (!o.detail.empty()) o.detail += "; ";
        o.detail += fmt("%s %.3g", c.name.c_str(), c.observed);
        if (std::isfinite(c.lower)) o.detail += fmt(" >= %.3g", c.lower);
        if (std::isfinite(c.upper)) o.detail += fmt(" <= %.3g", c.upper);
    }
    return o;
}

struct Task {
    ExperimentData data;
    FeedForwardNet net;
    double pretrain_acc = 0.0;
};

Task& desk_task() {
    static Task task = [] {
        Task t{synthetic_experiment(kSeed, kCapExamples, kEditExamples, kDim, kClasses), {}, 0.0};
        const auto init = FeedForwardNet::random({static_cast<int>(kDim), kHidden, kClasses}, Activation::Relu, kSeed);
        PretrainConfig pc;
        pc.seed = kSeed;
        const auto pr = pretrain(init, t.data.cap_train, &t.data.cap_test, pc);
        t.net = pr.net;
        t.pretrain_acc = pr.test_accuracy;
        return t;
    }();
    return task;
}

std::vector<CurvePoint> points_of(const std::vector<TradeoffRecord>& records, const std::string& kind) {
    std::vector<CurvePoint> out;
    for (const auto& r : records)
        if (r.curvature == kind) out.push_back({r.cap_acc, r.edit_acc});
    return out;
}

Outcome criterion7() {
    auto& task = desk_task();
    Outcome o{true, fmt("pretrain %.3f (floor %.2f)", task.pretrain_acc, kPretrainFloor)};
    if (task.pretrain_acc < kPretrainFloor) o.passed = false;

    ExperimentData data = task.data;
    data.edit_train = head(data.edit_train, kEditUsed);

    SweepOptions opts;
    opts.kinds = {"gnh", "kfac", "actcov"};
    opts.seed = kSeed;
    const auto records = sweep_gamma(task.net, data, opts);
    std::ofstream("acceptance_sweep.csv") << sweep_csv(records, opts);

    // K-FAC at gamma = 0.9 against the best fine-tuning checkpoint within the window.
    const TradeoffRecord* kfac = nullptr;
    for (const auto& r : records)
        if (r.curvature == "kfac" && r.k == 1.0) kfac = &r;
    EditConfig ft = opts.edit;
    ft.seed = job_seed("none", 1.0, kSeed);
    const auto curve = edit_curve(task.net, data, zero_curvature(task.net), ft, 1);
    const auto matched = best_near_edit_accuracy(curve, kfac->edit_acc, kMatchWindow);
    const bool kfac_ok = !std::isnan(matched.cap_acc) && kfac->cap_acc >= matched.cap_acc + kKfacMargin;
    o.passed = o.passed && kfac_ok;
    o.detail += fmt("; kfac(k=1) cap %.3f edit %.3f vs FT cap %.3f at edit %.3f (need +%.2f)", kfac->cap_acc,
                    kfac->edit_acc, matched.cap_acc, matched.edit_acc, kKfacMargin);

    // GNH against activation covariance on their trade-off fronts.
    const auto gnh = pareto_front(points_of(records, "gnh"));
    const auto act = pareto_front(points_of(records, "actcov"));
    const double lo = std::max(gnh.front().edit_acc, act.front().edit_acc);
    const double hi = std::min(gnh.back().edit_acc, act.back().edit_acc);
    // A single shared edit accuracy is still a matched comparison; it is made once.
    bool dom_ok = hi >= lo;
    o.detail += "; gnh vs actcov";
    const std::vector<double> fractions = hi > lo ? std::vector<double>{0.25, 0.5, 0.75} : std::vector<double>{0.0};
    for (double f : fractions) {
        const double e = lo + f * (hi - lo);
        const double cg = cap_at_edit_accuracy(gnh, e);
        const double ca = cap_at_edit_accuracy(act, e);
        const bool ok = cg >= ca - kDominanceSlack;
        dom_ok = dom_ok && ok;
        o.detail += fmt(" @%.3f %.3f/%.3f", e, cg, ca);
    }
    o.passed = o.passed && dom_ok;

    // Context only: the first k at which K-FAC clears the margin.
    for (const auto& r : records) {
        if (r.curvature != "kfac") continue;
        const auto m = best_near_edit_accuracy(curve, r.edit_acc, kMatchWindow);
        if (!std::isnan(m.cap_acc) && r.cap_acc >= m.cap_acc + kKfacMargin) {
            o.detail += fmt("; kfac clears the margin from k=%.2f (cap %.3f vs %.3f)", r.k, r.cap_acc, m.cap_acc);
            break;
        }
    }
    return o;
}

Outcome criterion8() {
    auto& task = desk_task();
    EditConfig config = sweep_edit_config();
    config.seed = kSeed;
    const auto rep = sequential_retention(task.net, task.data, 5, 50, config, 1000);
    const bool retained = rep.chunk1_final >= kRetentionRatio * rep.chunk1_after_first;
    const bool capability = rep.cap_projected >= rep.cap_unprojected + kSequentialMargin;
    return {retained && capability,
            fmt("chunk-1 acc %.3f after chunk 1, %.3f after chunk 5 (need >= %.1fx); capability %.3f vs plain "
                "sequential FT %.3f (need +%.2f)",
                rep.chunk1_after_first, rep.chunk1_final, kRetentionRatio, rep.cap_projected, rep.cap_unprojected,
                kSequentialMargin)};
}

bool same_weights(const FeedForwardNet& a, const FeedForwardNet& b) {
    if (a.layer_count() != b.layer_count()) return false;
    for (std::size_t l = 0; l < a.layer_count(); ++l)
        if (a.layer(l).weights != b.layer(l).weights) return false;
    return true;
}

Outcome criterion10() {
    const auto dir = std::filesystem::temp_directory_path() / ("crispe-acceptance-" + std::to_string(kSeed));
    std::filesystem::create_directories(dir);
    Outcome o{true, ""};

    // Sweep CSV twice at a fixed seed.
    const auto data = synthetic_experiment(kSeed, 600, 300, 8, 3);
    const auto net = FeedForwardNet::random({8, 16, 3}, Activation::Relu, kSeed);
    SweepOptions opts;
    opts.k_grid = {0.1, 1.0, 7.0};
    opts.edit.max_steps = 5;
    opts.curvature_examples = 200;
    opts.seed = kSeed;
    const auto a = sweep_csv(sweep_gamma(net, data, opts), opts);
    const auto b = sweep_csv(sweep_gamma(net, data, opts), opts);
    write_file(dir / "a.csv", a);
    write_file(dir / "b.csv", b);
    const bool csv_ok = read_file(dir / "a.csv") == read_file(dir / "b.csv");
    o.detail += fmt("sweep csv %s (%zu bytes)", csv_ok ? "identical" : "differs", a.size());

    // File round trips and cache-amortized editing for every curvature kind.
    const auto ckpt = dir / "net.crsp";
    write_checkpoint(net, ckpt);
    const std::string ckpt_bytes = read_file(ckpt);
    write_checkpoint(read_checkpoint(ckpt), dir / "net2.crsp");
    const bool crsp_ok = read_file(dir / "net2.crsp") == ckpt_bytes && same_weights(read_checkpoint(ckpt), net);
    o.detail += fmt("; crsp %s", crsp_ok ? "bit-exact" : "differs");

    const auto cap = head(data.cap_train, 200);
    const auto edit = head(data.edit_train, 60);
    bool crvc_ok = true;
    bool amortized_ok = true;
    for (auto kind : {CurvatureKind::ExactHessian, CurvatureKind::Gnh, CurvatureKind::Kfac, CurvatureKind::Ekfac,
                      CurvatureKind::ActivationCov}) {
        EstimateOptions eo;
        eo.seed = kSeed;
        const auto model = estimate_curvature(kind, net, cap, eo);
        const auto path = dir / (std::string(to_string(kind)) + ".crvc");
        write_curvature(model, path);
        const auto loaded = read_curvature(path);
        write_curvature(loaded, dir / "again.crvc");
        crvc_ok = crvc_ok && read_file(path) == read_file(dir / "again.crvc");

        EditConfig config;
        config.seed = kSeed;
        config.max_steps = 5;
        config.joint = kind == CurvatureKind::ExactHessian;
        const auto single = edit_batch(net, edit, estimate_curvature(kind, net, cap, eo), config);
        const auto cached = edit_batch(net, edit, loaded, config);
        amortized_ok = amortized_ok && same_weights(single.net, cached.net);
    }
    o.detail += fmt("; crvc %s; cache-amortized edit %s", crvc_ok ? "bit-exact" : "differs",
                    amortized_ok ? "bit-exact" : "differs");
    std::filesystem::remove_all(dir);
    o.passed = csv_ok && crsp_ok && crvc_ok && amortized_ok;
    return o;
}

} // namespace

int main() {
    std::printf("acceptance seed %llu, synthetic task %zu -> %d -> %d\n", static_cast<unsigned long long>(kSeed), kDim,
                kHidden, kClasses);

    run(1, "matrix-free projection equivalence", 5,
        [] { return from_checks({check_kron_equivalence(kSeed, 50, kKronTol)}); });
    run(2, "nullspace containment", 10,
        [] { return from_checks({check_nullspace_containment(kSeed, 20, kNullspaceTol)}); });
    run(3, "bregman quadratic approximation", 30,
        [] { return from_checks(check_bregman_quadratic(kSeed, 10, kBregmanGapTol, kBregmanMinRatio)); });
    run(4, "monte-carlo fisher vs gnh", 60, [] { return from_checks(check_fisher_rate(kSeed, FisherRateConfig{})); });
    run(5, "k-fac single-sample exactness", 5,
        [] { return from_checks({check_kfac_single_sample(kSeed, kKfacSingleTol)}); });
    run(6, "gradient and hessian oracles", 30, [] {
        return from_checks({check_gradient_fd(kSeed, 20, kGradTol), check_hvp_columns(kSeed, kHvpTol)});
    });
    run(7, "trade-off reproduction", 15 * 60, criterion7);
    run(8, "sequential retention", 15 * 60, criterion8);
    run(9, "constraint telemetry bound", 60,
        [] { return from_checks({check_constraint_bound(kSeed, 25, 0.9, kConstraintSlack)}); });
    run(10, "determinism and serialization", 5 * 60, criterion10);

    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}

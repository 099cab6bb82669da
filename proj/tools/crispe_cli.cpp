// Command-line front end over the C API.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crispe/crispe.h"
#include "json.hpp"

namespace {

enum Exit { kOk = 0, kValidation = 1, kIo = 2, kVerifyFailed = 3 };

struct Failure {
    int code;
    std::string message;
};

int exit_code(crispe_status s) {
    switch (s) {
    case CRISPE_OK: return kOk;
    case CRISPE_ERR_IO:
    case CRISPE_ERR_PARSE: return kIo;
    default: return kValidation;
    }
}

void check(crispe_status s, const std::string& context) {
    if (s != CRISPE_OK) throw Failure{exit_code(s), context + ": " + crispe_last_error()};
}

[[noreturn]] void invalid(const std::string& message) { throw Failure{kValidation, message}; }

template <typename T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using Net = std::unique_ptr<crispe_net, Deleter<crispe_net, crispe_net_free>>;
using Data = std::unique_ptr<crispe_dataset, Deleter<crispe_dataset, crispe_dataset_free>>;
using Curv = std::unique_ptr<crispe_curvature, Deleter<crispe_curvature, crispe_curvature_free>>;

struct CString {
    char* p = nullptr;
    ~CString() { crispe_string_free(p); }
};

// Every knob of the editing config, as parsed from the command line.
struct EditFlags {
    double gamma = 0.9;
    std::string curvature = "kfac";
    std::vector<size_t> layers;
    double lr = 5e-4;
    size_t steps = 25;
    size_t batch_size = 32;
    double early_stop = 0.01;
    std::string optimizer = "adam";
    size_t chunk_size = 100;
    double drift_threshold = 0.25;
    uint64_t seed = 0;
    size_t mc_samples = 1;
    bool empirical_fisher = false;
    bool refresh_kfac = false;
    bool joint = false;
    bool single_projection = false;
    std::string config_path;
};

struct DataFlags {
    size_t synthetic_n = 6000;
    size_t synthetic_dim = 16;
    int synthetic_classes = 5;
    uint64_t data_seed = 0;
};

struct EditSetup {
    crispe_edit_config config{};
    std::vector<size_t> layers;
    std::string curvature;

    // Config with the layer list pointing into this object.
    const crispe_edit_config* get() {
        config.tracked_layers = layers.empty() ? nullptr : layers.data();
        config.tracked_count = layers.size();
        return &config;
    }
};

CLI::Option* find_flag(CLI::App* app, const std::string& name) {
    try {
        return app->get_option(name);
    } catch (const CLI::OptionNotFound&) {
        return nullptr;
    }
}

bool given(CLI::App* app, const std::string& name) {
    auto* o = find_flag(app, name);
    return o != nullptr && o->count() > 0;
}

// Defaults, then the JSON file, then flags given explicitly on the command line.
// The sweep starts from SGD at lr 0.05 with every curvature kind refreshed on
// drift, instead of the editing defaults.
EditSetup resolve_config(CLI::App* app, const EditFlags& f, bool sweep = false) {
    EditSetup s;
    crispe_edit_config_default(&s.config);
    s.curvature = "kfac";
    auto& c = s.config;
    if (sweep) {
        c.optimizer = CRISPE_SGD;
        c.learning_rate = 0.05;
        c.refresh_kfac = 1;
    }

    if (!f.config_path.empty()) {
        std::ifstream in(f.config_path);
        if (!in) throw Failure{kIo, "config: cannot open " + f.config_path};
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw Failure{kIo, "config: " + f.config_path + " is not valid JSON: " + e.what()};
        }
        if (!j.is_object()) invalid("config: top level must be an object");
        for (const auto& [key, value] : j.items()) {
            try {
                if (key == "gamma") c.gamma = value.get<double>();
                else if (key == "learning_rate") c.learning_rate = value.get<double>();
                else if (key == "max_steps") c.max_steps = value.get<size_t>();
                else if (key == "batch_size") c.batch_size = value.get<size_t>();
                else if (key == "early_stop_loss") c.early_stop_loss = value.get<double>();
                else if (key == "optimizer") {
                    const auto name = value.get<std::string>();
                    if (name != "sgd" && name != "adam") invalid("optimizer: expected sgd or adam, got '" + name + "'");
                    c.optimizer = name == "sgd" ? CRISPE_SGD : CRISPE_ADAM;
                } else if (key == "beta1") c.beta1 = value.get<double>();
                else if (key == "beta2") c.beta2 = value.get<double>();
                else if (key == "adam_eps") c.adam_eps = value.get<double>();
                else if (key == "tracked_layers") s.layers = value.get<std::vector<size_t>>();
                else if (key == "drift_threshold") c.drift_threshold = value.get<double>();
                else if (key == "chunk_size") c.chunk_size = value.get<size_t>();
                else if (key == "double_projection") c.double_projection = value.get<bool>();
                else if (key == "refresh_kfac") c.refresh_kfac = value.get<bool>();
                else if (key == "joint") c.joint = value.get<bool>();
                else if (key == "mc_samples") c.mc_samples = value.get<size_t>();
                else if (key == "empirical_fisher") c.empirical_fisher = value.get<bool>();
                else if (key == "seed") c.seed = value.get<uint64_t>();
                else if (key == "curvature") s.curvature = value.get<std::string>();
                else invalid("config: unknown field '" + key + "'");
            } catch (const nlohmann::json::exception&) {
                invalid("config: field '" + key + "' has the wrong type");
            }
        }
    }

    if (given(app, "--gamma")) c.gamma = f.gamma;
    if (given(app, "--curvature")) s.curvature = f.curvature;
    if (given(app, "--layers")) s.layers = f.layers;
    if (given(app, "--lr")) c.learning_rate = f.lr;
    if (given(app, "--steps")) c.max_steps = f.steps;
    if (given(app, "--batch-size")) c.batch_size = f.batch_size;
    if (given(app, "--early-stop")) c.early_stop_loss = f.early_stop;
    if (given(app, "--optimizer")) c.optimizer = f.optimizer == "sgd" ? CRISPE_SGD : CRISPE_ADAM;
    if (given(app, "--chunk-size")) c.chunk_size = f.chunk_size;
    if (given(app, "--drift-threshold")) c.drift_threshold = f.drift_threshold;
    if (given(app, "--seed")) c.seed = f.seed;
    if (given(app, "--mc-samples")) c.mc_samples = f.mc_samples;
    if (given(app, "--empirical-fisher")) c.empirical_fisher = 1;
    if (given(app, "--refresh-kfac")) c.refresh_kfac = 1;
    if (given(app, "--joint")) c.joint = 1;
    if (given(app, "--single-projection")) c.double_projection = 0;

    static const char* kinds[] = {"hessian", "gnh", "kfac", "ekfac", "actcov"};
    bool known = false;
    for (const char* k : kinds) known = known || s.curvature == k;
    if (!known) invalid("curvature: unknown kind '" + s.curvature + "' (expected hessian, gnh, kfac, ekfac or actcov)");
    check(crispe_edit_config_validate(s.get()), "invalid configuration");
    return s;
}

void add_edit_flags(CLI::App* app, EditFlags& f, bool with_curvature = true) {
    app->add_option("--gamma", f.gamma, "Energy threshold in (0, 1)");
    if (with_curvature)
        app->add_option("--curvature", f.curvature, "Curvature model")
            ->check(CLI::IsMember({"hessian", "gnh", "kfac", "ekfac", "actcov"}));
    app->add_option("--layers", f.layers, "Tracked layer indices (default: all)")->delimiter(',');
    app->add_option("--lr", f.lr, "Learning rate");
    app->add_option("--steps", f.steps, "Maximum epochs over the edit set");
    app->add_option("--batch-size", f.batch_size, "Minibatch size");
    app->add_option("--early-stop", f.early_stop, "Stop when mean edit loss falls below this");
    app->add_option("--optimizer", f.optimizer, "Optimizer")->check(CLI::IsMember({"sgd", "adam"}));
    app->add_option("--chunk-size", f.chunk_size, "Edits per sequential chunk");
    app->add_option("--drift-threshold", f.drift_threshold, "Relative parameter change that triggers a projector rebuild");
    app->add_option("--seed", f.seed, "Seed for shuffling and label sampling");
    app->add_option("--mc-samples", f.mc_samples, "Sampled labels per example for K-FAC statistics");
    app->add_flag("--empirical-fisher", f.empirical_fisher, "Use dataset labels instead of sampled labels");
    app->add_flag("--refresh-kfac", f.refresh_kfac, "Re-estimate K-FAC/EK-FAC factors on drift");
    app->add_flag("--joint", f.joint, "One projector over all tracked layers (dense models only)");
    app->add_flag("--single-projection", f.single_projection, "Do not re-project Adam updates");
    app->add_option("--config", f.config_path, "JSON file with EditConfig fields; flags override it");
}

void add_data_flags(CLI::App* app, DataFlags& d) {
    app->add_option("--synthetic-n", d.synthetic_n, "Examples per synthetic task");
    app->add_option("--synthetic-dim", d.synthetic_dim, "Synthetic input width");
    app->add_option("--synthetic-classes", d.synthetic_classes, "Synthetic class count");
    app->add_option("--data-seed", d.data_seed, "Seed for synthetic data and held-out splits");
}

// "synthetic:A", "synthetic:B" or "idx:IMAGES,LABELS".
Data open_data(const std::string& spec, const DataFlags& d, const char* what) {
    crispe_dataset* raw = nullptr;
    if (spec == "synthetic:A" || spec == "synthetic:B") {
        check(crispe_dataset_synthetic(d.data_seed, d.synthetic_n, d.synthetic_dim, d.synthetic_classes,
                                       spec == "synthetic:A" ? 0 : 1, &raw),
              what);
    } else if (spec.rfind("idx:", 0) == 0) {
        const auto rest = spec.substr(4);
        const auto comma = rest.find(',');
        if (comma == std::string::npos) invalid(std::string(what) + ": expected idx:IMAGES,LABELS, got '" + spec + "'");
        check(crispe_dataset_load_idx(rest.substr(0, comma).c_str(), rest.substr(comma + 1).c_str(), &raw), what);
    } else {
        invalid(std::string(what) + ": unknown data spec '" + spec + "' (expected synthetic:A, synthetic:B or idx:IMAGES,LABELS)");
    }
    return Data(raw);
}

std::pair<Data, Data> split_data(const crispe_dataset* data, int role, uint64_t seed) {
    crispe_dataset* train = nullptr;
    crispe_dataset* test = nullptr;
    check(crispe_dataset_split(data, role, seed, &train, &test), "split");
    return {Data(train), Data(test)};
}

Data head(const crispe_dataset* data, size_t n) {
    crispe_dataset* out = nullptr;
    check(crispe_dataset_head(data, n, &out), "subset");
    return Data(out);
}

Net load_net(const std::string& path) {
    crispe_net* raw = nullptr;
    check(crispe_net_load(path.c_str(), &raw), "net");
    return Net(raw);
}

double accuracy(const crispe_net* net, const crispe_dataset* data) {
    double a = 0.0;
    check(crispe_accuracy(net, data, &a), "accuracy");
    return a;
}

Curv obtain_curvature(const std::string& cache, const crispe_net* net, const crispe_dataset* cap, EditSetup& s) {
    crispe_curvature* raw = nullptr;
    if (!cache.empty())
        check(crispe_curvature_load(cache.c_str(), &raw), "curvature cache");
    else
        check(crispe_curvature_estimate(net, cap, s.curvature.c_str(), s.get(), &raw), "curvature");
    return Curv(raw);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Curvature-restricted editing of small classifiers"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    DataFlags data_flags;

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "Train a fresh MLP on the capability task");
    std::string pre_data = "synthetic:A", pre_out, pre_activation = "relu";
    int pre_hidden = 64;
    size_t pre_epochs = 30, pre_batch = 32;
    double pre_lr = 0.1;
    uint64_t pre_seed = 0;
    pre->add_option("--data", pre_data, "Training data spec");
    pre->add_option("--hidden", pre_hidden, "Hidden width");
    pre->add_option("--activation", pre_activation, "Hidden activation")
        ->check(CLI::IsMember({"relu", "gelu", "tanh", "identity"}));
    pre->add_option("--epochs", pre_epochs, "Training epochs");
    pre->add_option("--lr", pre_lr, "SGD learning rate");
    pre->add_option("--batch-size", pre_batch, "Minibatch size");
    pre->add_option("--seed", pre_seed, "Initialisation and shuffling seed");
    pre->add_option("--out", pre_out, "Checkpoint to write")->required();
    add_data_flags(pre, data_flags);

    // cache-curvature
    auto* cache_cmd = app.add_subcommand("cache-curvature", "Estimate curvature once and store it");
    EditFlags cache_flags;
    std::string cache_net, cache_cap = "synthetic:A", cache_out;
    size_t cache_examples = 1000;
    cache_cmd->add_option("--net", cache_net, "Checkpoint")->required();
    cache_cmd->add_option("--cap", cache_cap, "Capability data spec");
    cache_cmd->add_option("--curvature-examples", cache_examples, "Capability examples used (0 = all)");
    cache_cmd->add_option("--out", cache_out, "Curvature cache to write")->required();
    add_edit_flags(cache_cmd, cache_flags);
    add_data_flags(cache_cmd, data_flags);

    // edit
    auto* edit_cmd = app.add_subcommand("edit", "Batch edit (projected fine-tuning)");
    EditFlags edit_flags;
    std::string edit_net, edit_data = "synthetic:B", edit_cap = "synthetic:A", edit_out, edit_cache;
    size_t edit_limit = 0, edit_examples = 1000;
    edit_cmd->add_option("--net", edit_net, "Checkpoint")->required();
    edit_cmd->add_option("--edit", edit_data, "Edit data spec");
    edit_cmd->add_option("--cap", edit_cap, "Capability data spec");
    edit_cmd->add_option("--edit-limit", edit_limit, "Use the first N edit examples (0 = all)");
    edit_cmd->add_option("--curvature-examples", edit_examples, "Capability examples used (0 = all)");
    edit_cmd->add_option("--curvature-cache", edit_cache, "Reuse a stored curvature estimate");
    edit_cmd->add_option("--out", edit_out, "Edited checkpoint to write")->required();
    add_edit_flags(edit_cmd, edit_flags);
    add_data_flags(edit_cmd, data_flags);

    // seq-edit
    auto* seq_cmd = app.add_subcommand("seq-edit", "Sequential edit with streaming K-FAC aggregation");
    EditFlags seq_flags;
    std::string seq_net, seq_data = "synthetic:B", seq_cap = "synthetic:A", seq_out, seq_cache, seq_ckpt;
    size_t seq_limit = 0, seq_examples = 1000;
    seq_cmd->add_option("--net", seq_net, "Checkpoint")->required();
    seq_cmd->add_option("--edit", seq_data, "Edit data spec");
    seq_cmd->add_option("--cap", seq_cap, "Capability data spec");
    seq_cmd->add_option("--edit-limit", seq_limit, "Use the first N edit examples (0 = all)");
    seq_cmd->add_option("--curvature-examples", seq_examples, "Capability examples used (0 = all)");
    seq_cmd->add_option("--curvature-cache", seq_cache, "Initial K-FAC factors");
    seq_cmd->add_option("--checkpoint-dir", seq_ckpt, "Directory for per-chunk checkpoints");
    seq_cmd->add_option("--out", seq_out, "Final checkpoint to write")->required();
    add_edit_flags(seq_cmd, seq_flags, false);
    add_data_flags(seq_cmd, data_flags);

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "Capability/edit trade-off over gamma = 1 - 10^-k");
    EditFlags sweep_flags;
    sweep_flags.optimizer = "sgd";
    sweep_flags.lr = 0.05;
    std::string sweep_net, sweep_cap = "synthetic:A", sweep_edit = "synthetic:B", sweep_out;
    std::string sweep_kinds = "none,gnh,kfac,ekfac,actcov";
    std::vector<double> sweep_grid{0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 7.0};
    size_t sweep_examples = 1000, sweep_limit = 1000;
    bool sweep_timing = false;
    sweep_cmd->add_option("--net", sweep_net, "Pretrained checkpoint")->required();
    sweep_cmd->add_option("--cap", sweep_cap, "Capability data spec");
    sweep_cmd->add_option("--edit", sweep_edit, "Edit data spec");
    sweep_cmd->add_option("--kinds", sweep_kinds, "Comma-separated kinds; none = unconstrained control");
    sweep_cmd->add_option("--k-grid", sweep_grid, "Exponents k")->delimiter(',');
    sweep_cmd->add_option("--curvature-examples", sweep_examples, "Capability examples used (0 = all)");
    sweep_cmd->add_option("--edit-limit", sweep_limit, "Use the first N edit examples (0 = all)");
    sweep_cmd->add_flag("--timing", sweep_timing, "Record wall time (the CSV is then not reproducible)");
    sweep_cmd->add_option("--out", sweep_out, "CSV path (default: stdout)");
    add_edit_flags(sweep_cmd, sweep_flags, false);
    add_data_flags(sweep_cmd, data_flags);

    // verify
    auto* verify_cmd = app.add_subcommand("verify", "Run the invariant suite");
    uint64_t verify_seed = 20240611;
    double verify_tol = 0.0;
    verify_cmd->add_option("--seed", verify_seed, "Seed for the random instances");
    verify_cmd->add_option("--tolerance", verify_tol, "Override every tolerance bound (0 = built-in)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidation;
    }

    try {
        if (*pre) {
            if (pre_hidden < 1) invalid("hidden: must be positive");
            if (pre_lr <= 0.0) invalid("lr: must be positive");
            if (pre_batch < 1) invalid("batch-size: must be at least 1");
            auto all = open_data(pre_data, data_flags, "data");
            auto [train, test] = split_data(all.get(), 0, data_flags.data_seed);
            const int widths[] = {static_cast<int>(crispe_dataset_dim(train.get())), pre_hidden,
                                  crispe_dataset_class_count(train.get())};
            crispe_net* init = nullptr;
            check(crispe_net_random(widths, 3, pre_activation.c_str(), pre_seed, &init), "init");
            Net net0(init);
            crispe_pretrain_config pc{pre_epochs, pre_lr, pre_batch, pre_seed};
            crispe_net* trained = nullptr;
            check(crispe_pretrain(net0.get(), train.get(), &pc, &trained), "pretrain");
            Net net(trained);
            check(crispe_net_save(net.get(), pre_out.c_str()), "save");
            std::printf("train_accuracy=%.4f test_accuracy=%.4f params=%zu\n", accuracy(net.get(), train.get()),
                        accuracy(net.get(), test.get()), crispe_net_param_count(net.get()));
            return kOk;
        }

        if (*cache_cmd) {
            auto setup = resolve_config(cache_cmd, cache_flags);
            auto net = load_net(cache_net);
            auto all = open_data(cache_cap, data_flags, "cap");
            auto [train, test] = split_data(all.get(), 0, data_flags.data_seed);
            auto cap = head(train.get(), cache_examples);
            auto curv = obtain_curvature("", net.get(), cap.get(), setup);
            check(crispe_curvature_save(curv.get(), cache_out.c_str()), "save");
            std::printf("kind=%s examples=%zu\n", crispe_curvature_kind(curv.get()), crispe_dataset_size(cap.get()));
            return kOk;
        }

        if (*edit_cmd) {
            auto setup = resolve_config(edit_cmd, edit_flags);
            auto net = load_net(edit_net);
            auto cap_all = open_data(edit_cap, data_flags, "cap");
            auto edit_all = open_data(edit_data, data_flags, "edit");
            auto [cap_train, cap_test] = split_data(cap_all.get(), 0, data_flags.data_seed);
            auto [edit_train, edit_test] = split_data(edit_all.get(), 1, data_flags.data_seed);
            auto cap = head(cap_train.get(), edit_examples);
            auto edits = head(edit_train.get(), edit_limit);
            auto curv = obtain_curvature(edit_cache, net.get(), cap.get(), setup);
            crispe_net* raw = nullptr;
            crispe_edit_summary summary{};
            check(crispe_edit(net.get(), edits.get(), curv.get(), cap.get(), setup.get(), &raw, &summary), "edit");
            Net edited(raw);
            check(crispe_net_save(edited.get(), edit_out.c_str()), "save");
            std::printf("curvature=%s steps=%zu epochs=%zu rebuilds=%zu edit_loss=%.6f cap_acc=%.4f edit_acc=%.4f "
                        "retained_energy=%.4f\n",
                        crispe_curvature_kind(curv.get()), summary.steps, summary.epochs, summary.rebuilds,
                        summary.final_edit_loss, accuracy(edited.get(), cap_test.get()),
                        accuracy(edited.get(), edit_test.get()), summary.retained_energy);
            return kOk;
        }

        if (*seq_cmd) {
            auto setup = resolve_config(seq_cmd, seq_flags);
            auto net = load_net(seq_net);
            auto cap_all = open_data(seq_cap, data_flags, "cap");
            auto edit_all = open_data(seq_data, data_flags, "edit");
            auto [cap_train, cap_test] = split_data(cap_all.get(), 0, data_flags.data_seed);
            auto [edit_train, edit_test] = split_data(edit_all.get(), 1, data_flags.data_seed);
            auto cap = head(cap_train.get(), seq_examples);
            auto edits = head(edit_train.get(), seq_limit);
            EditSetup kfac = setup;
            kfac.curvature = "kfac";
            auto curv = obtain_curvature(seq_cache, net.get(), cap.get(), kfac);
            crispe_net* raw = nullptr;
            size_t chunks = 0;
            check(crispe_seq_edit(net.get(), edits.get(), curv.get(), setup.get(),
                                  seq_ckpt.empty() ? nullptr : seq_ckpt.c_str(), &raw, nullptr, &chunks),
                  "seq-edit");
            Net edited(raw);
            check(crispe_net_save(edited.get(), seq_out.c_str()), "save");
            std::printf("chunks=%zu cap_acc=%.4f edit_acc=%.4f\n", chunks, accuracy(edited.get(), cap_test.get()),
                        accuracy(edited.get(), edit_test.get()));
            return kOk;
        }

        if (*sweep_cmd) {
            auto setup = resolve_config(sweep_cmd, sweep_flags, true);
            auto net = load_net(sweep_net);
            auto cap_all = open_data(sweep_cap, data_flags, "cap");
            auto edit_all = open_data(sweep_edit, data_flags, "edit");
            auto [cap_train, cap_test] = split_data(cap_all.get(), 0, data_flags.data_seed);
            auto [edit_train, edit_test] = split_data(edit_all.get(), 1, data_flags.data_seed);
            auto edits = head(edit_train.get(), sweep_limit);
            crispe_sweep_config sc{sweep_kinds.c_str(), sweep_grid.data(), sweep_grid.size(), sweep_examples,
                                   sweep_timing ? 1 : 0, setup.config.seed};
            CString csv;
            check(crispe_sweep(net.get(), cap_train.get(), cap_test.get(), edits.get(), edit_test.get(), setup.get(),
                               &sc, &csv.p),
                  "sweep");
            if (sweep_out.empty()) {
                std::fputs(csv.p, stdout);
            } else {
                std::ofstream out(sweep_out, std::ios::binary);
                if (!(out << csv.p)) throw Failure{kIo, "cannot write " + sweep_out};
            }
            return kOk;
        }

        if (*verify_cmd) {
            if (verify_tol < 0.0) invalid("tolerance: must be nonnegative");
            CString report;
            int passed = 0;
            check(crispe_verify(verify_seed, verify_tol, &report.p, &passed), "verify");
            std::fputs(report.p, stdout);
            std::printf("%s\n", passed ? "all checks passed" : "verification FAILED");
            return passed ? kOk : kVerifyFailed;
        }
    } catch (const Failure& f) {
        std::fprintf(stderr, "error: %s\n", f.message.c_str());
        return f.code;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    }
    return kOk;
}

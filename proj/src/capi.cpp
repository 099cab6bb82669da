#include "crispe/crispe.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>

#include "crispe/error.hpp"
#include "crispe/harness.hpp"
#include "crispe/serialize.hpp"
#include "crispe/verify.hpp"

struct crispe_net {
    crispe::FeedForwardNet net;
};
struct crispe_dataset {
    crispe::LabeledDataset data;
};
struct crispe_curvature {
    crispe::CurvatureModel model;
};

namespace {

thread_local std::string g_last_error;

crispe_status status_of(crispe::ErrorKind kind) {
    using crispe::ErrorKind;
    switch (kind) {
    case ErrorKind::Validation: return CRISPE_ERR_VALIDATION;
    case ErrorKind::Dimension: return CRISPE_ERR_DIMENSION;
    case ErrorKind::Numerical: return CRISPE_ERR_NUMERICAL;
    case ErrorKind::Size: return CRISPE_ERR_SIZE;
    case ErrorKind::State: return CRISPE_ERR_STATE;
    case ErrorKind::Parse: return CRISPE_ERR_PARSE;
    case ErrorKind::Io: return CRISPE_ERR_IO;
    }
    return CRISPE_ERR_INTERNAL;
}

template <typename F>
crispe_status guard(F&& body) {
    g_last_error.clear();
    try {
        body();
        return CRISPE_OK;
    } catch (const crispe::Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return CRISPE_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return CRISPE_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what) {
    crispe::require(p != nullptr, crispe::ErrorKind::Validation, std::string(what) + " must not be null");
}

crispe::EditConfig to_config(const crispe_edit_config* c) {
    need(c, "config");
    crispe::EditConfig out;
    out.gamma = c->gamma;
    out.learning_rate = c->learning_rate;
    out.max_steps = c->max_steps;
    out.batch_size = c->batch_size;
    out.early_stop_loss = c->early_stop_loss;
    crispe::require(c->optimizer == CRISPE_SGD || c->optimizer == CRISPE_ADAM, crispe::ErrorKind::Validation,
                    "optimizer: unknown value");
    out.optimizer = c->optimizer == CRISPE_SGD ? crispe::OptimizerKind::Sgd : crispe::OptimizerKind::Adam;
    out.beta1 = c->beta1;
    out.beta2 = c->beta2;
    out.adam_eps = c->adam_eps;
    if (c->tracked_layers != nullptr) out.tracked_layers.assign(c->tracked_layers, c->tracked_layers + c->tracked_count);
    out.drift_threshold = c->drift_threshold;
    out.chunk_size = c->chunk_size;
    out.double_projection = c->double_projection != 0;
    out.refresh_kfac = c->refresh_kfac != 0;
    out.joint = c->joint != 0;
    out.mc_samples = c->mc_samples;
    out.empirical_fisher = c->empirical_fisher != 0;
    out.seed = c->seed;
    return out;
}

crispe::EstimateOptions estimate_options(const crispe::EditConfig& c) {
    crispe::EstimateOptions o;
    o.layers = c.tracked_layers;
    o.mc_samples = c.mc_samples;
    o.seed = c.seed;
    o.empirical_fisher = c.empirical_fisher;
    return o;
}

char* copy_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    crispe::require(out != nullptr, crispe::ErrorKind::Numerical, "allocation failed");
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

} // namespace

extern "C" {

const char* crispe_last_error(void) { return g_last_error.c_str(); }

const char* crispe_status_name(crispe_status status) {
    switch (status) {
    case CRISPE_OK: return "ok";
    case CRISPE_ERR_VALIDATION: return "validation";
    case CRISPE_ERR_DIMENSION: return "dimension";
    case CRISPE_ERR_NUMERICAL: return "numerical";
    case CRISPE_ERR_SIZE: return "size";
    case CRISPE_ERR_STATE: return "state";
    case CRISPE_ERR_PARSE: return "parse";
    case CRISPE_ERR_IO: return "io";
    case CRISPE_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

void crispe_string_free(char* s) { std::free(s); }

void crispe_edit_config_default(crispe_edit_config* config) {
    if (config == nullptr) return;
    const crispe::EditConfig d;
    *config = crispe_edit_config{};
    config->gamma = d.gamma;
    config->learning_rate = d.learning_rate;
    config->max_steps = d.max_steps;
    config->batch_size = d.batch_size;
    config->early_stop_loss = d.early_stop_loss;
    config->optimizer = d.optimizer == crispe::OptimizerKind::Sgd ? CRISPE_SGD : CRISPE_ADAM;
    config->beta1 = d.beta1;
    config->beta2 = d.beta2;
    config->adam_eps = d.adam_eps;
    config->tracked_layers = nullptr;
    config->tracked_count = 0;
    config->drift_threshold = d.drift_threshold;
    config->chunk_size = d.chunk_size;
    config->double_projection = d.double_projection ? 1 : 0;
    config->refresh_kfac = d.refresh_kfac ? 1 : 0;
    config->joint = d.joint ? 1 : 0;
    config->mc_samples = d.mc_samples;
    config->empirical_fisher = d.empirical_fisher ? 1 : 0;
    config->seed = d.seed;
}

crispe_status crispe_edit_config_validate(const crispe_edit_config* config) {
    return guard([&] { to_config(config).validate(); });
}

crispe_status crispe_net_random(const int* widths, size_t count, const char* activation, uint64_t seed,
                                crispe_net** out) {
    return guard([&] {
        need(widths, "widths");
        need(activation, "activation");
        need(out, "out");
        crispe::require(count >= 2, crispe::ErrorKind::Validation, "widths: need at least input and output width");
        for (size_t i = 0; i < count; ++i)
            crispe::require(widths[i] >= 1, crispe::ErrorKind::Validation, "widths: every width must be positive");
        const std::vector<int> w(widths, widths + count);
        *out = new crispe_net{crispe::FeedForwardNet::random(w, crispe::parse_activation(activation), seed)};
    });
}

crispe_status crispe_net_load(const char* path, crispe_net** out) {
    return guard([&] {
        need(path, "path");
        need(out, "out");
        *out = new crispe_net{crispe::read_checkpoint(path)};
    });
}

crispe_status crispe_net_save(const crispe_net* net, const char* path) {
    return guard([&] {
        need(net, "net");
        need(path, "path");
        crispe::write_checkpoint(net->net, path);
    });
}

crispe_status crispe_net_clone(const crispe_net* net, crispe_net** out) {
    return guard([&] {
        need(net, "net");
        need(out, "out");
        *out = new crispe_net{net->net};
    });
}

void crispe_net_free(crispe_net* net) { delete net; }

size_t crispe_net_param_count(const crispe_net* net) {
    return net == nullptr ? 0 : static_cast<size_t>(net->net.param_count());
}
size_t crispe_net_layer_count(const crispe_net* net) { return net == nullptr ? 0 : net->net.layer_count(); }
size_t crispe_net_input_width(const crispe_net* net) {
    return net == nullptr ? 0 : static_cast<size_t>(net->net.input_width());
}

crispe_status crispe_net_parameters(const crispe_net* net, double* out, size_t capacity) {
    return guard([&] {
        need(net, "net");
        need(out, "out");
        const crispe::Vector theta = net->net.flatten();
        crispe::require(capacity >= static_cast<size_t>(theta.size()), crispe::ErrorKind::Size,
                        "parameter buffer holds " + std::to_string(capacity) + " values, need " +
                            std::to_string(theta.size()));
        std::memcpy(out, theta.data(), sizeof(double) * static_cast<size_t>(theta.size()));
    });
}

crispe_status crispe_dataset_synthetic(uint64_t seed, size_t n, size_t dim, int classes, int task, crispe_dataset** out) {
    return guard([&] {
        need(out, "out");
        crispe::require(task == 0 || task == 1, crispe::ErrorKind::Validation, "task: must be 0 (capability) or 1 (edit)");
        auto tasks = crispe::synthetic_tasks(seed, n, dim, classes);
        *out = new crispe_dataset{task == 0 ? std::move(tasks.task_a) : std::move(tasks.task_b)};
    });
}

crispe_status crispe_dataset_load_idx(const char* images, const char* labels, crispe_dataset** out) {
    return guard([&] {
        need(images, "images");
        need(labels, "labels");
        need(out, "out");
        *out = new crispe_dataset{crispe::load_idx(images, labels)};
    });
}

crispe_status crispe_dataset_split(const crispe_dataset* data, int role, uint64_t seed, crispe_dataset** train,
                                   crispe_dataset** test) {
    return guard([&] {
        need(data, "data");
        need(train, "train");
        need(test, "test");
        crispe::require(role == 0 || role == 1, crispe::ErrorKind::Validation, "role: must be 0 (capability) or 1 (edit)");
        // Same seeds as make_experiment.
        auto parts = crispe::split(data->data, crispe::kHeldOutFraction, crispe::derive_seed(seed, role == 0 ? 1 : 2));
        *train = new crispe_dataset{std::move(parts.first)};
        *test = new crispe_dataset{std::move(parts.second)};
    });
}

crispe_status crispe_dataset_head(const crispe_dataset* data, size_t n, crispe_dataset** out) {
    return guard([&] {
        need(data, "data");
        need(out, "out");
        *out = new crispe_dataset{crispe::head(data->data, n)};
    });
}

void crispe_dataset_free(crispe_dataset* data) { delete data; }
size_t crispe_dataset_size(const crispe_dataset* data) { return data == nullptr ? 0 : data->data.size(); }
size_t crispe_dataset_dim(const crispe_dataset* data) {
    return data == nullptr ? 0 : static_cast<size_t>(data->data.dim());
}
int crispe_dataset_class_count(const crispe_dataset* data) { return data == nullptr ? 0 : data->data.class_count; }

crispe_status crispe_accuracy(const crispe_net* net, const crispe_dataset* data, double* out) {
    return guard([&] {
        need(net, "net");
        need(data, "data");
        need(out, "out");
        crispe::require(data->data.dim() == net->net.input_width(), crispe::ErrorKind::Dimension,
                        "dataset width does not match the network input");
        *out = crispe::accuracy(net->net, data->data);
    });
}

crispe_status crispe_loss(const crispe_net* net, const crispe_dataset* data, double* out) {
    return guard([&] {
        need(net, "net");
        need(data, "data");
        need(out, "out");
        crispe::require(data->data.dim() == net->net.input_width(), crispe::ErrorKind::Dimension,
                        "dataset width does not match the network input");
        *out = crispe::dataset_loss(net->net, data->data);
    });
}

void crispe_pretrain_config_default(crispe_pretrain_config* config) {
    if (config == nullptr) return;
    const crispe::PretrainConfig d;
    config->epochs = d.epochs;
    config->learning_rate = d.learning_rate;
    config->batch_size = d.batch_size;
    config->seed = d.seed;
}

crispe_status crispe_pretrain(const crispe_net* net, const crispe_dataset* train, const crispe_pretrain_config* config,
                              crispe_net** out) {
    return guard([&] {
        need(net, "net");
        need(train, "train");
        need(config, "config");
        need(out, "out");
        crispe::PretrainConfig c{config->epochs, config->learning_rate, config->batch_size, config->seed};
        *out = new crispe_net{crispe::pretrain(net->net, train->data, nullptr, c).net};
    });
}

crispe_status crispe_curvature_estimate(const crispe_net* net, const crispe_dataset* cap, const char* kind,
                                        const crispe_edit_config* config, crispe_curvature** out) {
    return guard([&] {
        need(net, "net");
        need(cap, "cap");
        need(kind, "kind");
        need(out, "out");
        const auto c = to_config(config);
        crispe::require(cap->data.dim() == net->net.input_width(), crispe::ErrorKind::Dimension,
                        "capability data width does not match the network input");
        *out = new crispe_curvature{
            crispe::estimate_curvature(crispe::parse_curvature_kind(kind), net->net, cap->data, estimate_options(c))};
    });
}

crispe_status crispe_curvature_load(const char* path, crispe_curvature** out) {
    return guard([&] {
        need(path, "path");
        need(out, "out");
        *out = new crispe_curvature{crispe::read_curvature(path)};
    });
}

crispe_status crispe_curvature_save(const crispe_curvature* curvature, const char* path) {
    return guard([&] {
        need(curvature, "curvature");
        need(path, "path");
        crispe::write_curvature(curvature->model, path);
    });
}

void crispe_curvature_free(crispe_curvature* curvature) { delete curvature; }

const char* crispe_curvature_kind(const crispe_curvature* curvature) {
    return curvature == nullptr ? "" : crispe::to_string(curvature->model.kind());
}

crispe_status crispe_edit(const crispe_net* net, const crispe_dataset* edit, const crispe_curvature* curvature,
                          const crispe_dataset* cap, const crispe_edit_config* config, crispe_net** out,
                          crispe_edit_summary* summary) {
    return guard([&] {
        need(net, "net");
        need(edit, "edit");
        need(curvature, "curvature");
        need(out, "out");
        const auto c = to_config(config);
        auto result = crispe::edit_batch(net->net, edit->data, curvature->model, c, cap != nullptr ? &cap->data : nullptr);
        if (summary != nullptr) {
            const auto& t = result.telemetry;
            summary->steps = t.steps.size();
            summary->epochs = t.epochs.size();
            summary->rebuilds = t.rebuilds.size();
            summary->final_edit_loss = t.epochs.empty() ? crispe::dataset_loss(net->net, edit->data) : t.epochs.back().edit_loss;
            summary->initial_lambda_gamma = t.initial_lambda_gamma;
            summary->retained_energy = t.initial_retained_fraction;
            summary->final_quadratic_form = t.steps.empty() ? 0.0 : t.steps.back().quadratic_form;
        }
        *out = new crispe_net{std::move(result.net)};
    });
}

crispe_status crispe_seq_edit(const crispe_net* net, const crispe_dataset* edit, const crispe_curvature* curvature,
                              const crispe_edit_config* config, const char* checkpoint_dir, crispe_net** out,
                              crispe_curvature** factors_out, size_t* chunk_count) {
    return guard([&] {
        need(net, "net");
        need(edit, "edit");
        need(curvature, "curvature");
        need(out, "out");
        const auto c = to_config(config);
        c.validate();
        const auto* kfac = std::get_if<crispe::KfacModel>(&curvature->model.data);
        crispe::require(kfac != nullptr, crispe::ErrorKind::Validation,
                        std::string("curvature: sequential editing needs a kfac model, got ") +
                            crispe::to_string(curvature->model.kind()));
        const auto chunks = crispe::make_chunks(edit->data, c.chunk_size);
        auto result = crispe::edit_sequential(net->net, chunks, kfac->factors, c);
        if (checkpoint_dir != nullptr) {
            const std::filesystem::path dir(checkpoint_dir);
            std::error_code ec;
            std::filesystem::create_directories(dir, ec);
            crispe::require(!ec, crispe::ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
            for (size_t k = 0; k < result.nets.size(); ++k)
                crispe::write_checkpoint(result.nets[k], dir / ("chunk_" + std::to_string(k + 1) + ".crsp"));
        }
        if (chunk_count != nullptr) *chunk_count = result.nets.size();
        if (factors_out != nullptr) *factors_out = new crispe_curvature{{crispe::KfacModel{result.factors}}};
        *out = new crispe_net{std::move(result.nets.back())};
    });
}

crispe_status crispe_sweep(const crispe_net* net, const crispe_dataset* cap_train, const crispe_dataset* cap_test,
                           const crispe_dataset* edit_train, const crispe_dataset* edit_test,
                           const crispe_edit_config* edit, const crispe_sweep_config* sweep, char** csv_out) {
    return guard([&] {
        need(net, "net");
        need(cap_train, "cap_train");
        need(cap_test, "cap_test");
        need(edit_train, "edit_train");
        need(edit_test, "edit_test");
        need(sweep, "sweep");
        need(csv_out, "csv_out");
        crispe::SweepOptions opts;
        opts.edit = to_config(edit);
        if (sweep->kinds != nullptr) {
            opts.kinds.clear();
            std::stringstream s(sweep->kinds);
            std::string item;
            while (std::getline(s, item, ','))
                if (!item.empty()) opts.kinds.push_back(item);
            for (const auto& k : opts.kinds)
                if (k != "none") crispe::parse_curvature_kind(k);
        }
        if (sweep->k_grid != nullptr) opts.k_grid.assign(sweep->k_grid, sweep->k_grid + sweep->k_count);
        opts.curvature_examples = sweep->curvature_examples;
        opts.timing = sweep->timing != 0;
        opts.seed = sweep->seed;
        const crispe::ExperimentData data{cap_train->data, cap_test->data, edit_train->data, edit_test->data};
        *csv_out = copy_string(crispe::sweep_csv(crispe::sweep_gamma(net->net, data, opts), opts));
    });
}

crispe_status crispe_verify(uint64_t seed, double tolerance, char** report_out, int* passed) {
    return guard([&] {
        need(report_out, "report_out");
        need(passed, "passed");
        crispe::VerifyOptions opts;
        opts.seed = seed;
        if (tolerance > 0.0) opts.tolerance = tolerance;
        const auto report = crispe::verify(opts);
        *report_out = copy_string(report.format());
        *passed = report.passed() ? 1 : 0;
    });
}

} // extern "C"

#ifndef CRISPE_H
#define CRISPE_H

#include <stddef.h>
#include <stdint.h>

#if defined(CRISPE_BUILDING_LIBRARY)
#define CRISPE_API __attribute__((visibility("default")))
#else
#define CRISPE_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct crispe_net crispe_net;
typedef struct crispe_dataset crispe_dataset;
typedef struct crispe_curvature crispe_curvature;

typedef enum crispe_status {
    CRISPE_OK = 0,
    CRISPE_ERR_VALIDATION = 1,
    CRISPE_ERR_DIMENSION = 2,
    CRISPE_ERR_NUMERICAL = 3,
    CRISPE_ERR_SIZE = 4,
    CRISPE_ERR_STATE = 5,
    CRISPE_ERR_PARSE = 6,
    CRISPE_ERR_IO = 7,
    CRISPE_ERR_INTERNAL = 8
} crispe_status;

typedef enum crispe_optimizer { CRISPE_SGD = 0, CRISPE_ADAM = 1 } crispe_optimizer;

/* Message for the last failed call on this thread ("" after success). */
CRISPE_API const char* crispe_last_error(void);
CRISPE_API const char* crispe_status_name(crispe_status status);
CRISPE_API void crispe_string_free(char* s);

/* Editing hyperparameters; see crispe_edit_config_default for defaults.
 * tracked_layers may be NULL (every layer). */
typedef struct crispe_edit_config {
    double gamma;
    double learning_rate;
    size_t max_steps;
    size_t batch_size;
    double early_stop_loss;
    crispe_optimizer optimizer;
    double beta1;
    double beta2;
    double adam_eps;
    const size_t* tracked_layers;
    size_t tracked_count;
    double drift_threshold;
    size_t chunk_size;
    int double_projection;
    int refresh_kfac;
    int joint;
    size_t mc_samples;
    int empirical_fisher;
    uint64_t seed;
} crispe_edit_config;

CRISPE_API void crispe_edit_config_default(crispe_edit_config* config);
/* Validation error names the offending field. */
CRISPE_API crispe_status crispe_edit_config_validate(const crispe_edit_config* config);

/* Networks. widths = {d_in, hidden..., classes}; activation is relu, gelu,
 * tanh or identity for the hidden layers. */
CRISPE_API crispe_status crispe_net_random(const int* widths, size_t count, const char* activation, uint64_t seed,
                                           crispe_net** out);
CRISPE_API crispe_status crispe_net_load(const char* path, crispe_net** out);
CRISPE_API crispe_status crispe_net_save(const crispe_net* net, const char* path);
CRISPE_API crispe_status crispe_net_clone(const crispe_net* net, crispe_net** out);
CRISPE_API void crispe_net_free(crispe_net* net);
CRISPE_API size_t crispe_net_param_count(const crispe_net* net);
CRISPE_API size_t crispe_net_layer_count(const crispe_net* net);
CRISPE_API size_t crispe_net_input_width(const crispe_net* net);
/* Copies the canonical parameter vector into out (capacity >= param count). */
CRISPE_API crispe_status crispe_net_parameters(const crispe_net* net, double* out, size_t capacity);

/* Datasets. task is 0 for the capability task, 1 for the edit task. */
CRISPE_API crispe_status crispe_dataset_synthetic(uint64_t seed, size_t n, size_t dim, int classes, int task,
                                                  crispe_dataset** out);
CRISPE_API crispe_status crispe_dataset_load_idx(const char* images, const char* labels, crispe_dataset** out);
/* Held-out split used by every experiment; role 0 = capability, 1 = edit. */
CRISPE_API crispe_status crispe_dataset_split(const crispe_dataset* data, int role, uint64_t seed,
                                              crispe_dataset** train, crispe_dataset** test);
/* First n examples (n == 0 keeps everything). */
CRISPE_API crispe_status crispe_dataset_head(const crispe_dataset* data, size_t n, crispe_dataset** out);
CRISPE_API void crispe_dataset_free(crispe_dataset* data);
CRISPE_API size_t crispe_dataset_size(const crispe_dataset* data);
CRISPE_API size_t crispe_dataset_dim(const crispe_dataset* data);
CRISPE_API int crispe_dataset_class_count(const crispe_dataset* data);

CRISPE_API crispe_status crispe_accuracy(const crispe_net* net, const crispe_dataset* data, double* out);
CRISPE_API crispe_status crispe_loss(const crispe_net* net, const crispe_dataset* data, double* out);

typedef struct crispe_pretrain_config {
    size_t epochs;
    double learning_rate;
    size_t batch_size;
    uint64_t seed;
} crispe_pretrain_config;

CRISPE_API void crispe_pretrain_config_default(crispe_pretrain_config* config);
CRISPE_API crispe_status crispe_pretrain(const crispe_net* net, const crispe_dataset* train,
                                         const crispe_pretrain_config* config, crispe_net** out);

/* Curvature. kind is hessian, gnh, kfac, ekfac or actcov. The estimate uses
 * config's tracked layers, mc_samples, empirical_fisher and seed. */
CRISPE_API crispe_status crispe_curvature_estimate(const crispe_net* net, const crispe_dataset* cap, const char* kind,
                                                   const crispe_edit_config* config, crispe_curvature** out);
CRISPE_API crispe_status crispe_curvature_load(const char* path, crispe_curvature** out);
CRISPE_API crispe_status crispe_curvature_save(const crispe_curvature* curvature, const char* path);
CRISPE_API void crispe_curvature_free(crispe_curvature* curvature);
CRISPE_API const char* crispe_curvature_kind(const crispe_curvature* curvature);

typedef struct crispe_edit_summary {
    size_t steps;
    size_t epochs;
    size_t rebuilds;
    double final_edit_loss;
    double initial_lambda_gamma;
    double retained_energy;
    double final_quadratic_form;
} crispe_edit_summary;

/* Batch edit. cap may be NULL; when given it enables drift-triggered
 * re-estimation. summary may be NULL. */
CRISPE_API crispe_status crispe_edit(const crispe_net* net, const crispe_dataset* edit, const crispe_curvature* curvature,
                                     const crispe_dataset* cap, const crispe_edit_config* config, crispe_net** out,
                                     crispe_edit_summary* summary);

/* Sequential edit over chunks of config->chunk_size. curvature must be a
 * K-FAC model. checkpoint_dir (may be NULL) receives chunk_<k>.crsp after
 * every chunk. factors_out (may be NULL) receives the accumulated factors. */
CRISPE_API crispe_status crispe_seq_edit(const crispe_net* net, const crispe_dataset* edit,
                                         const crispe_curvature* curvature, const crispe_edit_config* config,
                                         const char* checkpoint_dir, crispe_net** out, crispe_curvature** factors_out,
                                         size_t* chunk_count);

typedef struct crispe_sweep_config {
    const char* kinds; /* comma-separated, "none" is the zero-curvature control */
    const double* k_grid;
    size_t k_count;
    size_t curvature_examples;
    int timing;
    uint64_t seed;
} crispe_sweep_config;

/* Trade-off sweep; *csv_out is released with crispe_string_free. */
CRISPE_API crispe_status crispe_sweep(const crispe_net* net, const crispe_dataset* cap_train,
                                      const crispe_dataset* cap_test, const crispe_dataset* edit_train,
                                      const crispe_dataset* edit_test, const crispe_edit_config* edit,
                                      const crispe_sweep_config* sweep, char** csv_out);

/* Invariant suite. tolerance <= 0 keeps the built-in bounds. *report_out is
 * released with crispe_string_free; *passed is 1 when every check passed. */
CRISPE_API crispe_status crispe_verify(uint64_t seed, double tolerance, char** report_out, int* passed);

#ifdef __cplusplus
}
#endif

#endif

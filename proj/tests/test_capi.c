/* C API smoke and contract tests. Links only libcrispe. */

#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>

#include "crispe/crispe.h"

static int failures = 0;

#define CHECK(cond)                                                        \
    do {                                                                   \
        if (!(cond)) {                                                     \
            fprintf(stderr, "%s:%d: CHECK(%s) failed\n", __FILE__, __LINE__, #cond); \
            ++failures;                                                    \
        }                                                                  \
    } while (0)

#define OK(call) CHECK((call) == CRISPE_OK)

static void test_errors(void) {
    crispe_net* net = NULL;
    const int widths[] = {3, 2};
    CHECK(crispe_net_random(widths, 1, "relu", 1, &net) == CRISPE_ERR_VALIDATION);
    CHECK(net == NULL);
    CHECK(strlen(crispe_last_error()) > 0);
    CHECK(crispe_net_random(widths, 2, "swish", 1, &net) != CRISPE_OK);
    CHECK(crispe_net_load("/nonexistent/net.crsp", &net) == CRISPE_ERR_IO);
    CHECK(strcmp(crispe_status_name(CRISPE_ERR_PARSE), "parse") == 0);

    crispe_edit_config c;
    crispe_edit_config_default(&c);
    OK(crispe_edit_config_validate(&c));
    CHECK(crispe_last_error()[0] == '\0');
    c.gamma = 1.5;
    CHECK(crispe_edit_config_validate(&c) == CRISPE_ERR_VALIDATION);
    CHECK(strstr(crispe_last_error(), "gamma") != NULL);
}

static void test_edit_round_trip(void) {
    const int widths[] = {6, 12, 3};
    crispe_net *net = NULL, *trained = NULL, *edited = NULL, *again = NULL, *loaded = NULL;
    crispe_dataset *cap = NULL, *edit = NULL, *cap_train = NULL, *cap_test = NULL;
    crispe_curvature *curv = NULL, *curv2 = NULL;
    char net_path[256], curv_path[256];
    snprintf(net_path, sizeof net_path, "/tmp/crispe-capi-%d.crsp", (int)getpid());
    snprintf(curv_path, sizeof curv_path, "/tmp/crispe-capi-%d.crvc", (int)getpid());

    OK(crispe_net_random(widths, 3, "relu", 4, &net));
    CHECK(crispe_net_layer_count(net) == 2);
    CHECK(crispe_net_param_count(net) == 12 * 7 + 3 * 13);
    CHECK(crispe_net_input_width(net) == 6);

    OK(crispe_dataset_synthetic(4, 300, 6, 3, 0, &cap));
    OK(crispe_dataset_synthetic(4, 60, 6, 3, 1, &edit));
    CHECK(crispe_dataset_size(cap) == 300);
    CHECK(crispe_dataset_dim(cap) == 6);
    CHECK(crispe_dataset_class_count(edit) == 3);
    OK(crispe_dataset_split(cap, 0, 4, &cap_train, &cap_test));
    CHECK(crispe_dataset_size(cap_test) == 50);

    crispe_pretrain_config pc;
    crispe_pretrain_config_default(&pc);
    OK(crispe_pretrain(net, cap_train, &pc, &trained));
    double acc = 0.0;
    OK(crispe_accuracy(trained, cap_test, &acc));
    CHECK(acc >= 0.9);

    crispe_edit_config c;
    crispe_edit_config_default(&c);
    c.optimizer = CRISPE_SGD;
    c.learning_rate = 0.05;
    c.seed = 9;
    OK(crispe_curvature_estimate(trained, cap_train, "kfac", &c, &curv));
    CHECK(strcmp(crispe_curvature_kind(curv), "kfac") == 0);
    OK(crispe_curvature_save(curv, curv_path));
    OK(crispe_curvature_load(curv_path, &curv2));

    crispe_edit_summary s;
    OK(crispe_edit(trained, edit, curv, NULL, &c, &edited, &s));
    CHECK(s.steps > 0);
    CHECK(s.retained_energy >= 0.9);
    OK(crispe_edit(trained, edit, curv2, NULL, &c, &again, NULL));

    /* The cached curvature gives a bit-identical edit. */
    const size_t p = crispe_net_param_count(edited);
    double* a = malloc(p * sizeof(double));
    double* b = malloc(p * sizeof(double));
    OK(crispe_net_parameters(edited, a, p));
    OK(crispe_net_parameters(again, b, p));
    CHECK(memcmp(a, b, p * sizeof(double)) == 0);
    CHECK(crispe_net_parameters(edited, a, p - 1) != CRISPE_OK);

    OK(crispe_net_save(edited, net_path));
    OK(crispe_net_load(net_path, &loaded));
    OK(crispe_net_parameters(loaded, b, p));
    CHECK(memcmp(a, b, p * sizeof(double)) == 0);

    /* Curvature over the wrong network is refused. */
    crispe_net* other = NULL;
    const int w2[] = {6, 5, 3};
    OK(crispe_net_random(w2, 3, "relu", 1, &other));
    CHECK(crispe_edit(other, edit, curv, NULL, &c, &again, NULL) != CRISPE_OK);

    free(a);
    free(b);
    remove(net_path);
    remove(curv_path);
    crispe_net_free(other);
    crispe_net_free(loaded);
    crispe_net_free(again);
    crispe_net_free(edited);
    crispe_net_free(trained);
    crispe_net_free(net);
    crispe_curvature_free(curv);
    crispe_curvature_free(curv2);
    crispe_dataset_free(cap_train);
    crispe_dataset_free(cap_test);
    crispe_dataset_free(cap);
    crispe_dataset_free(edit);
}

static void test_sequential_and_sweep(void) {
    const int widths[] = {4, 8, 3};
    crispe_net *net = NULL, *out = NULL;
    crispe_dataset *cap = NULL, *edit = NULL;
    crispe_curvature *curv = NULL, *factors = NULL;
    OK(crispe_net_random(widths, 3, "tanh", 2, &net));
    OK(crispe_dataset_synthetic(2, 120, 4, 3, 0, &cap));
    OK(crispe_dataset_synthetic(2, 30, 4, 3, 1, &edit));

    crispe_edit_config c;
    crispe_edit_config_default(&c);
    c.chunk_size = 10;
    c.max_steps = 3;
    OK(crispe_curvature_estimate(net, cap, "kfac", &c, &curv));
    size_t chunks = 0;
    OK(crispe_seq_edit(net, edit, curv, &c, NULL, &out, &factors, &chunks));
    CHECK(chunks == 3);
    CHECK(strcmp(crispe_curvature_kind(factors), "kfac") == 0);

    crispe_curvature* act = NULL;
    crispe_net* out2 = NULL;
    OK(crispe_curvature_estimate(net, cap, "actcov", &c, &act));
    CHECK(crispe_seq_edit(net, edit, act, &c, NULL, &out2, NULL, NULL) != CRISPE_OK);

    const double ks[] = {0.5, 2.0};
    crispe_sweep_config sc = {"none,kfac", ks, 2, 60, 0, 3};
    c.max_steps = 2;
    char* csv = NULL;
    char* csv2 = NULL;
    OK(crispe_sweep(net, cap, cap, edit, edit, &c, &sc, &csv));
    OK(crispe_sweep(net, cap, cap, edit, edit, &c, &sc, &csv2));
    CHECK(csv != NULL && strstr(csv, "curvature,gamma,k,") != NULL);
    CHECK(csv != NULL && csv2 != NULL && strcmp(csv, csv2) == 0);
    crispe_string_free(csv);
    crispe_string_free(csv2);

    crispe_net_free(net);
    crispe_net_free(out);
    crispe_net_free(out2);
    crispe_dataset_free(cap);
    crispe_dataset_free(edit);
    crispe_curvature_free(curv);
    crispe_curvature_free(factors);
    crispe_curvature_free(act);
}

static void test_verify(void) {
    char* report = NULL;
    int passed = 0;
    OK(crispe_verify(20240611, 0.0, &report, &passed));
    CHECK(passed == 1);
    CHECK(report != NULL && strstr(report, "PASS") != NULL);
    crispe_string_free(report);
}

int main(void) {
    test_errors();
    test_edit_round_trip();
    test_sequential_and_sweep();
    test_verify();
    crispe_net_free(NULL);
    crispe_dataset_free(NULL);
    crispe_curvature_free(NULL);
    if (failures == 0) printf("capi: all checks passed\n");
    return failures == 0 ? 0 : 1;
}

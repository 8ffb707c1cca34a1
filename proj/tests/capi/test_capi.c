/* Exercises the shared library through its C header only. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "streambag/streambag.h"

static int failures = 0;

#define EXPECT(cond)                                                    \
    do {                                                                \
        if (!(cond)) {                                                  \
            fprintf(stderr, "%s:%d: failed: %s\n", __FILE__, __LINE__, #cond); \
            ++failures;                                                 \
        }                                                               \
    } while (0)

static const char* header =
    "@relation weather\n"
    "@attribute outlook {sunny,overcast,rainy}\n"
    "@attribute temperature numeric\n"
    "@attribute play {yes,no}\n"
    "@data\n";

static void log_line(const char* line, void* user) {
    (void)line;
    ++*(int*)user;
}

static void test_schema_and_ensemble(void) {
    sb_schema* schema = NULL;
    EXPECT(sb_schema_from_arff_header(header, &schema) == SB_OK);
    EXPECT(sb_schema_num_features(schema) == 2);
    EXPECT(sb_schema_num_classes(schema) == 2);

    sb_schema* bad = NULL;
    EXPECT(sb_schema_from_arff_header("@relation x\n@attribute a\n@data\n", &bad) == SB_E_PARSE);
    EXPECT(bad == NULL);
    EXPECT(strlen(sb_last_error()) > 0);

    sb_ensemble* e = NULL;
    EXPECT(sb_ensemble_create(schema, "algorithm=lbag\nm=4\nseed=3\n", &e) == SB_OK);
    EXPECT(sb_ensemble_size(e) == 4);
    EXPECT(strcmp(sb_last_error(), "") == 0);

    uint32_t predicted = 99;
    double votes[2];
    double x[2] = {0, 20.0};
    EXPECT(sb_ensemble_predict(e, x, 2, &predicted, votes, 2) == SB_OK);
    EXPECT(predicted == 0);

    for (int i = 0; i < 600; ++i) {
        double v[2] = {(double)(i % 3), 10.0 + (i % 30)};
        uint32_t cls = v[0] == 0 ? 1u : 0u;
        EXPECT(sb_ensemble_train(e, v, 2, cls, 1.0) == SB_OK);
    }
    EXPECT(sb_ensemble_train_row(e, "overcast,18,yes") == SB_OK);
    EXPECT(sb_ensemble_train_row(e, "foggy,18,yes") == SB_E_PARSE);
    double sunny[2] = {0, 25.0};
    EXPECT(sb_ensemble_predict(e, sunny, 2, &predicted, NULL, 0) == SB_OK);
    EXPECT(predicted == 1);
    EXPECT(sb_ensemble_predict_row(e, "rainy,12,?", &predicted) != SB_OK || predicted <= 1);
    EXPECT(sb_ensemble_predict(e, sunny, 2, &predicted, votes, 1) == SB_E_INVALID);
    EXPECT(sb_ensemble_predict(e, sunny, 1, &predicted, NULL, 0) == SB_E_INVALID);
    EXPECT(sb_ensemble_train(e, sunny, 2, 7, 1.0) != SB_OK);

    char digest[17];
    char small[8];
    EXPECT(sb_ensemble_digest(e, digest, sizeof digest) == SB_OK);
    EXPECT(strlen(digest) == 16);
    EXPECT(sb_ensemble_digest(e, small, sizeof small) == SB_E_INVALID);

    size_t before = sb_ensemble_resets(e);
    EXPECT(sb_ensemble_reset_learner(e, 1) == SB_OK);
    EXPECT(sb_ensemble_resets(e) == before + 1);
    EXPECT(sb_ensemble_reset_learner(e, 4) == SB_E_RANGE);

    sb_ensemble* bad_cfg = NULL;
    EXPECT(sb_ensemble_create(schema, "algorithm=nope\n", &bad_cfg) == SB_E_CONFIG);
    EXPECT(sb_ensemble_create(schema, "m=0\n", &bad_cfg) == SB_E_CONFIG);
    EXPECT(bad_cfg == NULL);
    EXPECT(sb_ensemble_create(NULL, NULL, &bad_cfg) == SB_E_INVALID);

    sb_ensemble_free(e);
    sb_schema_free(schema);
    sb_ensemble_free(NULL);
    sb_schema_free(NULL);
}

static void test_determinism(void) {
    sb_schema* schema = NULL;
    sb_ensemble* a = NULL;
    sb_ensemble* b = NULL;
    char da[17], db[17];
    EXPECT(sb_schema_synthetic(&schema) == SB_OK);
    EXPECT(sb_ensemble_create(schema, "algorithm=srp\nm=3\n", &a) == SB_OK);
    EXPECT(sb_ensemble_create(schema, "algorithm=srp\nm=3\n", &b) == SB_OK);
    for (int i = 0; i < 2000; ++i) {
        double v[3] = {(i * 37 % 100) / 100.0, (i * 61 % 100) / 100.0, (i * 13 % 100) / 100.0};
        uint32_t cls = v[0] + v[1] > 1.0 ? 1u : 0u;
        sb_ensemble_train(a, v, 3, cls, 1.0);
        sb_ensemble_train(b, v, 3, cls, 1.0);
    }
    sb_ensemble_digest(a, da, sizeof da);
    sb_ensemble_digest(b, db, sizeof db);
    EXPECT(strcmp(da, db) == 0);
    sb_ensemble_free(a);
    sb_ensemble_free(b);
    sb_schema_free(schema);
}

static void test_formulas(void) {
    double eps = 0;
    uint64_t rd = 0;
    char* text = NULL;
    uint32_t abc[9] = {0, 1, 2, 2, 1, 0, 0, 1, 2};

    EXPECT(sb_hoeffding_bound(1.0, 0.05, 1000.0, &eps) == SB_OK);
    EXPECT(fabs(eps - 0.0387023) < 1e-6);
    EXPECT(sb_hoeffding_bound(1.0, 0.05, 0.0, &eps) == SB_E_INVALID);
    EXPECT(sb_rd_sequential(9, 3, &rd) == SB_OK && rd == 81);
    EXPECT(sb_rd_minibatch(9, 3, 3, &rd) == SB_OK && rd == 45);
    EXPECT(sb_empirical_rd(abc, 9, 1, 3, &text) == SB_OK);
    EXPECT(text && strcmp(text, "\xe2\x88\x9e\xe2\x88\x9e\xe2\x88\x9e 135 135") == 0);
    sb_string_free(text);
    EXPECT(sb_empirical_rd(abc, 9, 5, 3, &text) == SB_E_INVALID);
}

static void test_commands(void) {
    char* row = NULL;
    char* summary = NULL;
    int lines = 0;
    char path[64];
    FILE* f;
    char* table = NULL;
    char* warnings = NULL;

    EXPECT(sb_process("algorithm=ozabag\nm=2\ndataset=synthetic:2000\n", &row) == SB_OK);
    EXPECT(row && strncmp(row, "run_id,", 7) == 0);
    EXPECT(row && strchr(row, '\n') && strstr(row, "ozabag-m2-Seq"));
    sb_string_free(row);

    EXPECT(sb_process("dataset=/no/such/file.arff\n", &row) == SB_E_CONFIG);
    EXPECT(sb_process("executor=B0\ndataset=synthetic:10\n", &row) == SB_E_CONFIG);
    EXPECT(sb_generate("dataset=synthetic:10\nconnect=127.0.0.1:1\ncount=3\n", &summary) == SB_E_NETWORK);
    EXPECT(sb_calibrate("dataset=synthetic:10\nwarmup=0\n", &(double){0}) == SB_E_INVALID);

    snprintf(path, sizeof path, "/tmp/sb_capi_%d.csv", (int)rand());
    remove(path);
    {
        char cfg[256];
        snprintf(cfg, sizeof cfg,
                 "algorithms=ozabag\ndatasets=synthetic:500\nexecutors=seq,B50\nmode=offline\nm=2\noutput=%s\n", path);
        EXPECT(sb_grid(cfg, log_line, &lines, &summary) == SB_OK);
        EXPECT(summary && strcmp(summary, "executed=2 skipped=0 failed=0") == 0);
        EXPECT(lines >= 2);
        sb_string_free(summary);
    }
    EXPECT(sb_report(path, &table, &warnings) == SB_OK);
    EXPECT(table && strstr(table, "ozabag"));
    sb_string_free(table);
    sb_string_free(warnings);
    remove(path);
    EXPECT(sb_report("/no/such/results.csv", &table, &warnings) == SB_E_IO);

    f = fopen(path, "w");
    fputs("not,a,results,file\n", f);
    fclose(f);
    EXPECT(sb_report(path, &table, &warnings) != SB_OK);
    remove(path);
}

int main(void) {
    EXPECT(strcmp(sb_version(), "0.1.0") == 0);
    EXPECT(strcmp(sb_status_name(SB_E_CONFIG), "configuration error") == 0);
    test_schema_and_ensemble();
    test_determinism();
    test_formulas();
    test_commands();
    if (failures) {
        fprintf(stderr, "%d check(s) failed\n", failures);
        return 1;
    }
    puts("capi: all checks passed");
    return 0;
}

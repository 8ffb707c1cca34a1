#ifndef STREAMBAG_H
#define STREAMBAG_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define SB_API __attribute__((visibility("default")))
#else
#define SB_API
#endif

typedef enum sb_status {
    SB_OK = 0,
    SB_E_INVALID = 1,   /* bad argument or precondition */
    SB_E_CONFIG = 2,    /* bad or conflicting configuration */
    SB_E_IO = 3,        /* file access */
    SB_E_PARSE = 4,     /* malformed dataset or row */
    SB_E_NETWORK = 5,   /* socket failure */
    SB_E_PROTOCOL = 6,  /* malformed stream */
    SB_E_RANGE = 7,     /* index out of range */
    SB_E_RUNTIME = 8    /* anything else */
} sb_status;

typedef struct sb_schema sb_schema;
typedef struct sb_ensemble sb_ensemble;

/* Message of the last failing call on this thread ("" if none). */
SB_API const char* sb_last_error(void);
SB_API const char* sb_status_name(sb_status status);
SB_API const char* sb_version(void);

/* Strings returned through char** out parameters are owned by the caller. */
SB_API void sb_string_free(char* s);

/* Schemas */
SB_API sb_status sb_schema_from_arff_header(const char* text, sb_schema** out);
SB_API sb_status sb_schema_synthetic(sb_schema** out);
SB_API void sb_schema_free(sb_schema* schema);
SB_API size_t sb_schema_num_features(const sb_schema* schema);
SB_API size_t sb_schema_num_classes(const sb_schema* schema);

/* Ensembles. `config` is key=value text (one per line), may be NULL. */
SB_API sb_status sb_ensemble_create(const sb_schema* schema, const char* config, sb_ensemble** out);
SB_API void sb_ensemble_free(sb_ensemble* ensemble);
SB_API size_t sb_ensemble_size(const sb_ensemble* ensemble);
/* values: one per feature, nominal values as indices. */
SB_API sb_status sb_ensemble_train(sb_ensemble* ensemble, const double* values, size_t num_values, uint32_t class_index,
                                   double weight);
/* votes may be NULL; otherwise votes_len must be >= the class count. */
SB_API sb_status sb_ensemble_predict(const sb_ensemble* ensemble, const double* values, size_t num_values,
                                     uint32_t* predicted_class, double* votes, size_t votes_len);
/* CSV row with the class last. */
SB_API sb_status sb_ensemble_train_row(sb_ensemble* ensemble, const char* row);
SB_API sb_status sb_ensemble_predict_row(const sb_ensemble* ensemble, const char* row, uint32_t* predicted_class);
SB_API sb_status sb_ensemble_reset_learner(sb_ensemble* ensemble, size_t index);
SB_API size_t sb_ensemble_resets(const sb_ensemble* ensemble);
/* Writes a 16-character hex digest plus NUL; buf_len must be >= 17. */
SB_API sb_status sb_ensemble_digest(const sb_ensemble* ensemble, char* buf, size_t buf_len);

/* Commands; each takes key=value configuration text. */
typedef void (*sb_log_fn)(const char* line, void* user);

/* One results row as CSV (header line included) in *row_csv. */
SB_API sb_status sb_process(const char* config, char** row_csv);
/* Streams to a processor; *summary receives "frames=N backpressure=M". */
SB_API sb_status sb_generate(const char* config, char** summary);
SB_API sb_status sb_grid(const char* config, sb_log_fn log, void* user, char** summary);
/* Summary table (CSV) and warnings (one per line) from a results file. */
SB_API sb_status sb_report(const char* results_path, char** table, char** warnings);
/* keys: connect, dataset, warmup (seconds). */
SB_API sb_status sb_calibrate(const char* config, double* capacity_ips);

/* Models and formulas */
SB_API sb_status sb_hoeffding_bound(double range, double delta, double n, double* out);
SB_API sb_status sb_rd_sequential(uint64_t n, uint64_t m, uint64_t* out);
SB_API sb_status sb_rd_minibatch(uint64_t n, uint64_t m, uint64_t b, uint64_t* out);
/* counting: 0 = distinct ids, 1 = accesses. Text uses "∞" for first use. */
SB_API sb_status sb_empirical_rd(const uint32_t* trace, size_t len, int counting, size_t group, char** text);

#ifdef __cplusplus
}
#endif

#endif

#ifndef ADVIDS_ADVIDS_H
#define ADVIDS_ADVIDS_H

/* C interface to the advids library. Every call returns a status code; on
 * failure advids_last_error() describes the problem for the calling thread.
 * Handles are opaque and owned by the caller until freed. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ADVIDS_API __declspec(dllexport)
#else
#define ADVIDS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum advids_status {
  ADVIDS_OK = 0,
  ADVIDS_ERR_DIMENSION = 1,
  ADVIDS_ERR_PARAMETER = 2,
  ADVIDS_ERR_CONTRACT = 3,
  ADVIDS_ERR_LABEL = 4,
  ADVIDS_ERR_DATA = 5,
  ADVIDS_ERR_PARSE = 6,
  ADVIDS_ERR_CONFIG = 7,
  ADVIDS_ERR_METRIC = 8,
  ADVIDS_ERR_MISSING_SPLITS = 9,
  ADVIDS_ERR_CHECKPOINT_MISMATCH = 10,
  ADVIDS_ERR_EMPTY_REPORTS = 11,
  ADVIDS_ERR_IO = 12,
  ADVIDS_ERR_INVALID_ARGUMENT = 13, /* null handle or pointer */
  ADVIDS_ERR_INTERNAL = 14
} advids_status;

typedef struct advids_model advids_model;

/* Settings that replace values of the experiment config. Zero/NULL fields
 * leave the config untouched. */
typedef struct advids_run_options {
  const char* config_path; /* NULL: the built-in synthetic benchmark */
  int has_seed;
  uint64_t seed;
  const char* out;
  size_t parallel;
  const char* dataset;
  const char* schema; /* unsw, nslkdd, generic or synthetic */
} advids_run_options;

ADVIDS_API const char* advids_version(void);
ADVIDS_API const char* advids_last_error(void);
ADVIDS_API const char* advids_status_name(advids_status status);

/* Process exit status for a status code: 0 ok, 2 unparseable input,
 * 3 missing splits or checkpoints, 4 checkpoint mismatch, 5 no reports,
 * 1 otherwise. */
ADVIDS_API int advids_exit_code(advids_status status);

/* Runs one of preprocess, train, attack, advtrain or report. */
ADVIDS_API advids_status advids_run(const char* command, const advids_run_options* options);

/* Writes the resolved experiment config as JSON into buffer (NUL
 * terminated). *length receives the size needed without the terminator. */
ADVIDS_API advids_status advids_resolve_config(const advids_run_options* options, char* buffer,
                                               size_t capacity, size_t* length);

ADVIDS_API advids_status advids_model_load(const char* path, advids_model** model);
ADVIDS_API advids_status advids_model_save(const advids_model* model, const char* path);
ADVIDS_API void advids_model_free(advids_model* model);
ADVIDS_API advids_status advids_model_input_features(const advids_model* model, size_t* features);

/* Row-major x[rows * cols]. labels and scores (probability of attack) may
 * each be NULL. */
ADVIDS_API advids_status advids_model_predict(const advids_model* model, const double* x,
                                              size_t rows, size_t cols, int* labels,
                                              double* scores);

/* Crafts adversarial rows. attack_json holds an attack config object such as
 * {"method":"pgd","epsilon":0.1}. adversarial receives rows * cols values;
 * success (may be NULL) receives 1 where the prediction differs from y. */
ADVIDS_API advids_status advids_attack(const advids_model* model, const char* attack_json,
                                       const double* x, const int* y, size_t rows, size_t cols,
                                       double* adversarial, int* success);

ADVIDS_API advids_status advids_roc_auc(const double* scores, const int* labels, size_t n,
                                        double* auc);

#ifdef __cplusplus
}
#endif

#endif

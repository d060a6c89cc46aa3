#ifndef APCGNN_H
#define APCGNN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ApcStatus {
  APC_STATUS_OK = 0,
  APC_STATUS_NULL_POINTER = 1,
  APC_STATUS_INVALID_ARGUMENT = 2,
  APC_STATUS_IO = 3,
  APC_STATUS_MODEL_FORMAT = 4,
  APC_STATUS_TRAINING = 5,
  APC_STATUS_PANIC = 6,
} ApcStatus;

// Opaque trained model.
typedef struct ApcModel ApcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *apc_version(void);

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *apc_last_error_message(void);

// Trains on a synthetic cohort of `n` patients. `config_json` may be null
// for defaults or a JSON object overriding any training option.
//
// # Safety
// `config_json` must be null or a valid C string; `out` must be writable.
enum ApcStatus apc_model_train_synthetic(size_t n,
                                         uint64_t seed,
                                         const char *config_json,
                                         struct ApcModel **out);

// # Safety
// `path` must be a valid C string; `out` must be writable.
enum ApcStatus apc_model_load(const char *path, struct ApcModel **out);

// # Safety
// `model` must come from this library; `path` must be a valid C string.
enum ApcStatus apc_model_save(const struct ApcModel *model, const char *path);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or come from this library and not be used afterwards.
void apc_model_free(struct ApcModel *model);

// Number of input features the model expects.
//
// # Safety
// `model` must be null or come from this library.
size_t apc_model_num_features(const struct ApcModel *model);

// # Safety
// `model` must be null or come from this library.
size_t apc_model_num_classes(const struct ApcModel *model);

// Predicts one patient from raw measurements in model feature order. NaN
// marks a missing value. Writes `n_classes` probabilities and the predicted
// class index.
//
// # Safety
// `features` must hold `n_features` doubles, `probs` room for `n_classes`,
// and `class_out` must be null or writable.
enum ApcStatus apc_model_predict(const struct ApcModel *model,
                                 const double *features,
                                 size_t n_features,
                                 double *probs,
                                 size_t n_classes,
                                 size_t *class_out);

// Predicts from a JSON feature object (`null` or absent keys are missing)
// and returns the full explanation report as JSON in `out_json`.
//
// # Safety
// `patient_json` must be a valid C string; `out_json` must be writable. The
// returned string must be released with `apc_string_free`.
enum ApcStatus apc_model_predict_json(const struct ApcModel *model,
                                      const char *patient_json,
                                      char **out_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or come from this library and not be used afterwards.
void apc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APCGNN_H */

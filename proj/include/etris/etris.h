/* Copyright 2026 The ETRIS Desk Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the etris library. Every call returns an etris_status;
 * on failure etris_last_error() describes the problem (per thread, valid
 * until the next call on that thread). Strings handed out through char**
 * are owned by the caller and released with etris_free_string. A NULL
 * config_path means the built-in defaults.
 */
#ifndef ETRIS_ETRIS_H_
#define ETRIS_ETRIS_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ETRIS_API __declspec(dllexport)
#else
#define ETRIS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum etris_status {
  ETRIS_OK = 0,
  ETRIS_INPUT_ERROR = 1,     /* bad files, unknown words, size mismatches */
  ETRIS_NUMERICAL_ERROR = 2, /* non-finite loss or probe */
  ETRIS_INTERNAL_ERROR = 3,
  ETRIS_CONFIG_ERROR = 4 /* invalid configuration values or keys */
} etris_status;

typedef struct etris_model etris_model;

typedef void (*etris_epoch_callback)(int epoch, double loss, double oiou, void* user);

ETRIS_API const char* etris_version(void);
ETRIS_API const char* etris_last_error(void);
ETRIS_API void etris_free_string(char* text);

ETRIS_API etris_status etris_synth(const char* out_dir, int n, uint64_t seed, int image_size);

/* Trains on data_dir and writes train_log.jsonl, best.etrb and final.etrb
 * to out_dir. val_dir may be NULL, in which case train.val_fraction of the
 * data is held out (and with a zero fraction the training set is
 * monitored). summary_json (may be NULL) receives best/final epoch data. */
ETRIS_API etris_status etris_train(const char* data_dir, const char* config_path, const char* out_dir,
                                   const char* val_dir, etris_epoch_callback on_epoch, void* user,
                                   char** summary_json);

/* report_path may be NULL; report_json may be NULL. */
ETRIS_API etris_status etris_eval(const char* checkpoint_path, const char* data_dir, const char* report_path,
                                  char** report_json);

/* Trainable-parameter ledger. as_text selects the table form over JSON. */
ETRIS_API etris_status etris_params(const char* config_path, int as_text, char** out);

/* Gradient checks on the small instance, with config_path applied on top
 * of it. *passed is set to 1 when every check is within tolerance; a
 * failing check is not an error status. */
ETRIS_API etris_status etris_gradcheck(const char* config_path, int full, char** report_json, int* passed);

/* axis: zoom_variant | hidden_dim | scope | bridger. val_dir may be NULL
 * (then train.val_fraction is held out, 0.2 when unset). seeds is 1 or 3.
 * csv receives the table. */
ETRIS_API etris_status etris_ablate(const char* axis, const char* data_dir, const char* val_dir,
                                    const char* config_path, int seeds, char** csv);

ETRIS_API etris_status etris_model_create(const char* config_path, etris_model** out);
ETRIS_API etris_status etris_model_load(const char* checkpoint_path, etris_model** out);
ETRIS_API etris_status etris_model_save(const etris_model* model, const char* checkpoint_path);
ETRIS_API void etris_model_destroy(etris_model* model);

ETRIS_API etris_status etris_model_image_size(const etris_model* model, int* size);
ETRIS_API etris_status etris_model_backbone_sha256(const etris_model* model, char** hex);

/* rgb: size*size*3 interleaved bytes; mask_out: size*size bytes of 0/1.
 * logits_out (may be NULL) receives (size/4)^2 floats. */
ETRIS_API etris_status etris_model_predict(const etris_model* model, const uint8_t* rgb, int size,
                                           const char* expression, uint8_t* mask_out, float* logits_out);

#ifdef __cplusplus
}
#endif

#endif /* ETRIS_ETRIS_H_ */

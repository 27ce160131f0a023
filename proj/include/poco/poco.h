/* C interface of libpoco. Every function returns a poco_status; on failure
 * poco_last_error() describes the problem (thread-local, valid until the next
 * call on the same thread). Objects are opaque and released with their
 * *_free function; strings returned through char** are released with
 * poco_string_free. */
#ifndef POCO_POCO_H
#define POCO_POCO_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define POCO_API
#else
#define POCO_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum poco_status {
  POCO_OK = 0,
  POCO_ERR_INVALID_ARGUMENT = 1,
  POCO_ERR_SHAPE = 2,
  POCO_ERR_IO = 3,
  POCO_ERR_FORMAT = 4,
  POCO_ERR_NUMERIC = 5,
  POCO_ERR_RUNTIME = 6,
  /* gradcheck / selfcheck ran to completion but a check did not pass */
  POCO_ERR_CHECK_FAILED = 7
} poco_status;

typedef struct poco_config poco_config;
typedef struct poco_dataset poco_dataset;
typedef struct poco_checkpoint poco_checkpoint;

typedef void (*poco_progress_fn)(const char* line, void* user);

POCO_API const char* poco_last_error(void);
POCO_API const char* poco_version(void);
POCO_API void poco_string_free(char* s);

/* Progress lines of long-running calls (pretrain, finetune); NULL disables. */
POCO_API void poco_set_progress(poco_progress_fn fn, void* user);
/* Worker threads for data preparation and kernels; 0 restores the default.
 * Results do not depend on the thread count. */
POCO_API poco_status poco_set_workers(int workers);

/* Configuration */
POCO_API poco_status poco_config_default(poco_config** out);
POCO_API poco_status poco_config_load(const char* path, poco_config** out);
POCO_API poco_status poco_config_parse(const char* json, poco_config** out);
POCO_API poco_status poco_config_set_seed(poco_config* cfg, uint64_t seed);
POCO_API poco_status poco_config_get_seed(const poco_config* cfg, uint64_t* seed);
/* data.val_fraction, used to split a plain labeled directory. */
POCO_API poco_status poco_config_get_val_fraction(const poco_config* cfg, double* fraction);
POCO_API poco_status poco_config_to_json(const poco_config* cfg, char** json);
/* Negative counts per stage, e.g. "31/15/7". */
POCO_API poco_status poco_config_stage_plan(const poco_config* cfg, char** plan);
POCO_API void poco_config_free(poco_config* cfg);

/* Polar warp of a PNG/JPEG file to a PNG. r_max <= 0 selects half the input
 * width; out_size 0 keeps the input extent. */
POCO_API poco_status poco_warp_file(const char* input, const char* output, double r_max, size_t out_size);

/* Datasets */
/* Writes the synthetic dataset described by the config's data.synth section. */
POCO_API poco_status poco_synth_write(const poco_config* cfg, uint64_t seed, const char* dir);
/* One split ("pretrain", "finetune-train", "finetune-val", "test") of the
 * synthetic dataset, generated in memory. */
POCO_API poco_status poco_dataset_synth(const poco_config* cfg, uint64_t seed, const char* split,
                                        poco_dataset** out);
/* A directory written by poco_synth_write (split required) or a plain image
 * directory with an optional labels.csv (split must be NULL). Images are
 * resized to image_size. */
POCO_API poco_status poco_dataset_load(const char* dir, const char* split, size_t image_size, poco_dataset** out);
POCO_API int poco_dataset_is_synth_root(const char* dir);
POCO_API poco_status poco_dataset_split(const poco_dataset* data, double val_fraction, uint64_t seed,
                                        poco_dataset** train, poco_dataset** val);
POCO_API size_t poco_dataset_size(const poco_dataset* data);
POCO_API int poco_dataset_has_labels(const poco_dataset* data);
POCO_API void poco_dataset_free(poco_dataset* data);

/* Training and evaluation */
/* loss_csv may be NULL. */
POCO_API poco_status poco_pretrain(const poco_config* cfg, const poco_dataset* data, const char* loss_csv,
                                   poco_checkpoint** out);
/* pretrained NULL fine-tunes on a randomly initialized backbone. curve_csv may be NULL. */
POCO_API poco_status poco_finetune(const poco_checkpoint* pretrained, const poco_config* cfg,
                                   const poco_dataset* train, const poco_dataset* val, const char* curve_csv,
                                   poco_checkpoint** out);
/* Metrics report as JSON; written to json_path when it is not NULL, returned
 * through json when that is not NULL. */
POCO_API poco_status poco_evaluate(const poco_checkpoint* ckpt, const poco_dataset* data, const char* json_path,
                                   char** json);
/* stage is "f", "h1" or "h2". */
POCO_API poco_status poco_embed(const poco_checkpoint* ckpt, const poco_dataset* data, const char* stage,
                                const char* csv_path);

/* Checkpoints */
POCO_API poco_status poco_checkpoint_save(const poco_checkpoint* ckpt, const char* path);
POCO_API poco_status poco_checkpoint_load(const char* path, poco_checkpoint** out);
POCO_API poco_status poco_checkpoint_hash(const poco_checkpoint* ckpt, char** hash);
POCO_API poco_status poco_checkpoint_metadata(const poco_checkpoint* ckpt, char** json);
POCO_API void poco_checkpoint_free(poco_checkpoint* ckpt);

/* Diagnostics */
/* Finite-difference check of the full training loss through a small model.
 * Returns POCO_ERR_CHECK_FAILED when the error bounds are exceeded. report may be NULL. */
POCO_API poco_status poco_gradcheck(uint64_t seed, double* max_relative_error, double* median_relative_error,
                                    char** report);
/* Property battery; table holds one "PASS|FAIL name detail" line per check. */
POCO_API poco_status poco_selfcheck(uint64_t seed, char** table);

#ifdef __cplusplus
}
#endif

#endif

/* Copyright 2026 The stemflow Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to libstemflow. Every call returns an sf_status; on failure
 * sf_last_error() describes the error for the calling thread. Strings
 * returned through char** out-parameters are owned by the caller and must
 * be released with sf_string_free. Configuration is passed as JSON text;
 * NULL or "" selects the defaults.
 */
#ifndef STEMFLOW_H
#define STEMFLOW_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SF_API __declspec(dllexport)
#else
#define SF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sf_status {
    SF_OK = 0,
    SF_ERR_INVALID_ARGUMENT = 1,
    SF_ERR_IO = 2,
    SF_ERR_NUMERIC = 3,
    SF_ERR_NOT_FOUND = 4,
    SF_ERR_CONFLICT = 5,
    SF_ERR_INTERNAL = 6
} sf_status;

typedef struct sf_model sf_model;
typedef struct sf_service sf_service;

/* Called after every training step. */
typedef void (*sf_progress_fn)(int64_t step, double loss, void* user);

SF_API const char* sf_version(void);
SF_API const char* sf_last_error(void);
SF_API const char* sf_status_name(sf_status status);
SF_API void sf_string_free(char* s);

/* {"count", "seed", "generator": {...}} -> manifest.jsonl + latents/ under out_dir. */
SF_API sf_status sf_corpus_build(const char* config_json, const char* out_dir);

/* Trains on a corpus written by sf_corpus_build. config_json is a TrainConfig,
 * optionally with "setting": "A" | "B" | "C" as the base. resume_checkpoint
 * may be NULL. Writes train_log.csv and checkpoints to out_dir. */
SF_API sf_status sf_train(const char* config_json, const char* corpus_dir, const char* out_dir,
                          const char* resume_checkpoint, sf_progress_fn progress, void* user);

SF_API sf_status sf_model_load(const char* checkpoint_path, sf_model** out);
SF_API void sf_model_free(sf_model* model);
/* {"config", "param_count", "train", "step"} */
SF_API sf_status sf_model_info(const sf_model* model, char** info_json);

/* request_json: {"mode", "stems": [...], "style_token", "tempo_bpm",
 * "activity_masks": {stem: [0/1...]}, "sampler": {...}}. Writes one WAV
 * per stem, mix.wav and report.json to out_dir (NULL skips writing). */
SF_API sf_status sf_generate(const sf_model* model, const char* request_json, const char* out_dir,
                             char** report_json);

/* Evaluates named checkpoints; a NULL path marks the cell absent. */
SF_API sf_status sf_eval(const char* config_json, const char* const* names, const char* const* checkpoint_paths,
                         size_t count, char** report_csv);

/* config_json: ServiceConfig {"checkpoint", "data_dir", "host", "port", "sampler"}. */
SF_API sf_status sf_service_create(const char* config_json, sf_service** out);
/* Binds and returns the port (port 0 in the config picks a free one). */
SF_API sf_status sf_service_bind(sf_service* service, int* port);
/* Blocks until sf_service_stop. */
SF_API sf_status sf_service_run(sf_service* service);
SF_API void sf_service_stop(sf_service* service);
SF_API void sf_service_free(sf_service* service);

#ifdef __cplusplus
}
#endif

#endif /* STEMFLOW_H */

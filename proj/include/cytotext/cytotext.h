/*
 * Copyright 2026 The cytotext Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

/*
 * Stable C interface to libcytotext.
 *
 * All strings are UTF-8 and NUL-terminated. Strings returned through a
 * cyt_result or cyt_context stay valid until that object is destroyed or
 * reused; strings returned through an out parameter of type char** are owned
 * by the caller and released with cyt_string_free. A context may be used by
 * one thread at a time, except for cyt_context_cancel.
 */

#ifndef CYTOTEXT_H_
#define CYTOTEXT_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CYT_API __declspec(dllexport)
#else
#define CYT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cyt_status {
  CYT_OK = 0,
  CYT_E_INVALID_ARGUMENT = 1,
  CYT_E_EMPTY_CAPTION = 2,
  CYT_E_EMPTY_INPUT = 3,
  CYT_E_LEXICON_INVALID = 4,
  CYT_E_CONFIG_INVALID = 5,
  CYT_E_TEMPLATE_INVALID = 6,
  CYT_E_MANIFEST_INVALID = 7,
  CYT_E_MANIFEST_HASH_MISMATCH = 8,
  CYT_E_CHECKPOINT_EXISTS = 9,
  CYT_E_IO = 10,
  CYT_E_SHARD_WRITE_FAILURE = 11,
  CYT_E_AUTH_MISSING = 12,
  CYT_E_NON_RETRYABLE = 13,
  CYT_E_EXHAUSTED_RETRIES = 14,
  CYT_E_INSUFFICIENT_RATERS = 15,
  CYT_E_ALL_STREAMS_EMPTY = 16,
  CYT_E_CANCELLED = 17,
  CYT_E_INTERNAL = 18
} cyt_status;

typedef enum cyt_log_level {
  CYT_LOG_DEBUG = 0,
  CYT_LOG_INFO = 1,
  CYT_LOG_WARN = 2,
  CYT_LOG_ERROR = 3
} cyt_log_level;

typedef enum cyt_format { CYT_FORMAT_TABLE = 0, CYT_FORMAT_JSON = 1 } cyt_format;

typedef struct cyt_context cyt_context;
typedef struct cyt_result cyt_result;

typedef void (*cyt_log_fn)(cyt_log_level level, const char* message, void* user);

/* Library version, "MAJOR.MINOR.PATCH". */
CYT_API const char* cyt_version(void);
/* Symbolic name of a status, e.g. "ManifestHashMismatch". */
CYT_API const char* cyt_status_name(cyt_status status);
/* Process exit code for a status: 0 ok, 2 usage/config/input, 1 runtime. */
CYT_API int cyt_status_exit_code(cyt_status status);

CYT_API cyt_status cyt_context_create(cyt_context** out);
CYT_API void cyt_context_destroy(cyt_context* ctx);
/* Message of the last failed call on ctx, or "" after a success. */
CYT_API const char* cyt_context_last_error(const cyt_context* ctx);
/* Requests cancellation of the running command. Async-signal-safe. */
CYT_API void cyt_context_cancel(cyt_context* ctx);
/* Process-wide log sink; NULL disables logging. */
CYT_API void cyt_set_log_callback(cyt_log_fn fn, void* user, cyt_log_level threshold);

/* Command results. The summary is a JSON object (the run summary); the report
 * is the rendered table or JSON document of commands that produce one, else "". */
CYT_API const char* cyt_result_summary_json(const cyt_result* result);
CYT_API const char* cyt_result_report(const cyt_result* result);
CYT_API void cyt_result_destroy(cyt_result* result);

typedef struct cyt_annotate_options {
  const char* config_path;
  const char* manifest_path;
  const char* output_dir;
  const char* image_root; /* NULL: directory of the manifest */
  int resume;
} cyt_annotate_options;

typedef struct cyt_fuse_options {
  const char* config_path;
  const char* dataset_dir;
  const char* output_dir;
} cyt_fuse_options;

typedef struct cyt_refine_options {
  const char* config_path;
  const char* dataset_dir;
  const char* output_dir;
  const char* image_root; /* NULL: "." */
} cyt_refine_options;

typedef struct cyt_reformat_options {
  const char* config_path;    /* optional */
  const char* dataset_dir;
  const char* templates_path; /* NULL: built-in templates */
  int has_seed;
  uint64_t seed;
  const char* output_path;
} cyt_reformat_options;

typedef struct cyt_replay_options {
  const char* config_path;
  const char* domain_dataset_dir;  /* optional */
  const char* general_manifest;    /* optional */
  const char* general_image_root;  /* NULL: directory of the general manifest */
  int has_weights;
  double domain_weight;
  double general_weight;
  int has_seed;
  uint64_t seed;
  const char* output_path;
} cyt_replay_options;

typedef struct cyt_eval_options {
  const char* config_path;
  const char* bench; /* "morpho" or "tbs" */
  const char* manifest_path;
  const char* model_id;   /* NULL: the config's "model" */
  const char* image_root; /* NULL: directory of the manifest */
  cyt_format format;
} cyt_eval_options;

typedef struct cyt_agreement_options {
  const char* const* rater_files;
  size_t rater_count;
  const char* manifest_path;
  cyt_format format;
} cyt_agreement_options;

typedef struct cyt_simulate_options {
  const char* trial_config_path;
  cyt_format format;
} cyt_simulate_options;

/* Each command stores a result in *out on success. A cancelled annotate run
 * returns CYT_E_CANCELLED and still stores its partial result. */
CYT_API cyt_status cyt_annotate(cyt_context* ctx, const cyt_annotate_options* opts, cyt_result** out);
CYT_API cyt_status cyt_fuse(cyt_context* ctx, const cyt_fuse_options* opts, cyt_result** out);
CYT_API cyt_status cyt_refine(cyt_context* ctx, const cyt_refine_options* opts, cyt_result** out);
CYT_API cyt_status cyt_reformat(cyt_context* ctx, const cyt_reformat_options* opts, cyt_result** out);
CYT_API cyt_status cyt_replay(cyt_context* ctx, const cyt_replay_options* opts, cyt_result** out);
CYT_API cyt_status cyt_eval(cyt_context* ctx, const cyt_eval_options* opts, cyt_result** out);
CYT_API cyt_status cyt_agreement(cyt_context* ctx, const cyt_agreement_options* opts, cyt_result** out);
CYT_API cyt_status cyt_simulate(cyt_context* ctx, const cyt_simulate_options* opts, cyt_result** out);

/* Parses free text with a lexicon (NULL path: built-in lexicon) and returns
 * the structured caption as JSON. */
CYT_API cyt_status cyt_parse_caption(cyt_context* ctx, const char* text, const char* lexicon_path, char** out_json);
/* Fuses a JSON array of {"endpoint_id", "caption": {...}} under a JSON fusion
 * policy (NULL: defaults) and returns the fused description as JSON. */
CYT_API cyt_status cyt_fuse_captions_json(cyt_context* ctx, const char* captions_json, const char* policy_json,
                                          char** out_json);
CYT_API void cyt_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* CYTOTEXT_H_ */

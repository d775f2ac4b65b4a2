/*
 * diffusam C API.
 *
 * Every function returns a dsam_status. On failure a human-readable message
 * is available from dsam_last_error() on the calling thread until the next
 * API call on that thread. Objects returned through out-parameters are owned
 * by the caller and released with the matching *_free function; strings are
 * released with dsam_string_free.
 */
#ifndef DIFFUSAM_H
#define DIFFUSAM_H

#include <stddef.h>
#include <stdint.h>

#if defined(DIFFUSAM_BUILDING_LIBRARY)
#define DSAM_API __attribute__((visibility("default")))
#else
#define DSAM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dsam_status {
  DSAM_OK = 0,
  DSAM_ERR_INVALID_ARGUMENT = 1, /* bad parameter or configuration value */
  DSAM_ERR_IO = 2,               /* unreadable/unwritable file, bad raster */
  DSAM_ERR_PARSE = 3,            /* malformed JSON / JSONL / annotation */
  DSAM_ERR_TRANSPORT = 4,        /* backend unreachable or unhealthy */
  DSAM_ERR_PROTOCOL = 5,         /* backend replied with something invalid */
  DSAM_ERR_UNKNOWN_TASK = 6,     /* result refers to a task not in the task file */
  DSAM_ERR_BIND = 7,             /* server port unavailable */
  DSAM_ERR_INTERNAL = 99
} dsam_status;

DSAM_API const char* dsam_version(void);
DSAM_API const char* dsam_last_error(void);
DSAM_API const char* dsam_status_name(dsam_status status);
DSAM_API void dsam_string_free(char* s);

/* ---- Rasters ----------------------------------------------------------- */

typedef struct dsam_image dsam_image;

/* PNG or JPEG, decoded to 8-bit RGB. */
DSAM_API dsam_status dsam_image_load(const char* path, dsam_image** out);
DSAM_API dsam_status dsam_image_from_rgb(const uint8_t* pixels, int width, int height, dsam_image** out);
DSAM_API dsam_status dsam_image_save_png(const dsam_image* img, const char* path);
DSAM_API dsam_status dsam_image_dims(const dsam_image* img, int* width, int* height);
/* Interleaved RGB, width*height*3 bytes, valid while img lives. */
DSAM_API const uint8_t* dsam_image_pixels(const dsam_image* img);
DSAM_API void dsam_image_free(dsam_image* img);

/* ---- Enhancement ------------------------------------------------------- */

typedef struct dsam_enhance_params {
  double clahe_clip_limit;
  int clahe_tile_cols;
  int clahe_tile_rows;
  double unsharp_sigma;
  double unsharp_amount;
} dsam_enhance_params;

DSAM_API void dsam_enhance_params_default(dsam_enhance_params* p);
/* CIELAB + CLAHE(L) + unsharp mask. */
DSAM_API dsam_status dsam_preprocess(const dsam_image* in, const dsam_enhance_params* p, dsam_image** out);

/* ---- Red-highlight cues ------------------------------------------------ */

typedef struct dsam_cue_params {
  int r_min;
  int g_max;
  int b_max;
  int min_component_area;
  double nesting_containment;
} dsam_cue_params;

typedef struct dsam_box {
  int x_min, y_min, x_max, y_max; /* half-open */
} dsam_box;

DSAM_API void dsam_cue_params_default(dsam_cue_params* p);
/* Fills up to `capacity` boxes; *count receives the total found. */
DSAM_API dsam_status dsam_extract_cues(const dsam_image* edited, const dsam_cue_params* p,
                                       dsam_box* boxes, size_t capacity, size_t* count);
/* Debug overlay of the red mask and detected boxes over `background`. */
DSAM_API dsam_status dsam_cue_overlay(const dsam_image* background, const dsam_image* edited,
                                      const dsam_cue_params* p, dsam_image** out);

/* ---- Pipeline configuration -------------------------------------------- */

typedef struct dsam_config dsam_config;

/* Defaults, optionally overlaid with a JSON config file (path may be NULL). */
DSAM_API dsam_status dsam_config_load(const char* path, dsam_config** out);
/* Overlays a JSON document with the same schema as the config file. */
DSAM_API dsam_status dsam_config_apply_json(dsam_config* cfg, const char* json);
DSAM_API dsam_status dsam_config_to_json(const dsam_config* cfg, char** json_out);
DSAM_API void dsam_config_free(dsam_config* cfg);

/* Health of every configured endpoint as JSON. DSAM_ERR_TRANSPORT if any
 * endpoint is unhealthy (the report is still produced). */
DSAM_API dsam_status dsam_check_endpoints(const dsam_config* cfg, char** report_json);

/* ---- Grounding runs ---------------------------------------------------- */

typedef struct dsam_ground_options {
  const char* tasks_path;    /* canonical JSONL */
  const char* results_path;  /* result JSONL */
  const char* manifest_path; /* NULL: <results>.manifest.json */
  const char* overlay_dir;   /* NULL: no overlays */
  int parallelism;
} dsam_ground_options;

typedef struct dsam_ground_summary {
  size_t n_tasks;
  size_t n_errors;
} dsam_ground_summary;

/* Health-checks endpoints first (DSAM_ERR_TRANSPORT without running any task
 * if one is down), then grounds every task. Task-level failures do not fail
 * the call; they are counted in summary->n_errors. */
DSAM_API dsam_status dsam_ground_file(const dsam_config* cfg, const dsam_ground_options* opts,
                                      dsam_ground_summary* summary);

/* ---- Evaluation -------------------------------------------------------- */

typedef enum dsam_report_format {
  DSAM_REPORT_SUMMARY = 0,
  DSAM_REPORT_TABLE = 1,
  DSAM_REPORT_CSV = 2,
  DSAM_REPORT_JSON = 3
} dsam_report_format;

DSAM_API dsam_status dsam_evaluate_files(const char* results_path, const char* tasks_path,
                                         const double* thresholds, size_t n_thresholds,
                                         const char* model_name, dsam_report_format format,
                                         char** report_out);

/* Writes canonical JSONL from a dataset release: kind is "nwpu" (directory)
 * or "vrsbench" (annotation file). Diagnostics are returned as text. */
DSAM_API dsam_status dsam_convert_dataset(const char* kind, const char* source, const char* output_path,
                                          size_t* n_records, char** diagnostics);

/* ---- Mock backends ----------------------------------------------------- */

typedef struct dsam_mock_server dsam_mock_server;

/* config_json: {"behavior", "seed", "jitter_px", "shrink", "fail_rate",
 * "stroke_px", "rewrite_suffixes", "roles", "truth_tasks" (canonical JSONL
 * path), "log_requests"}; every key optional. port 0 picks a free port. */
DSAM_API dsam_status dsam_mock_server_start(const char* config_json, const char* host, int port,
                                            dsam_mock_server** out);
DSAM_API int dsam_mock_server_port(const dsam_mock_server* server);
DSAM_API void dsam_mock_server_stop(dsam_mock_server* server);
DSAM_API void dsam_mock_server_free(dsam_mock_server* server);

#ifdef __cplusplus
}
#endif

#endif /* DIFFUSAM_H */

/* C API for the fouriernat shared library.
 *
 * All functions return fnat_rc; FNAT_OK is 0 and the nonzero codes match the
 * CLI exit-code contract (1 check failure, 2 config/usage error, 3 numerical
 * abort). On failure, fnat_last_error() returns a thread-local message.
 * Strings returned through char** out-parameters are heap-allocated and must
 * be released with fnat_string_free().
 */
#ifndef FNAT_CAPI_H
#define FNAT_CAPI_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fnat_rc {
  FNAT_OK = 0,
  FNAT_E_CHECK = 1,
  FNAT_E_CONFIG = 2,
  FNAT_E_NUMERIC = 3
} fnat_rc;

const char* fnat_version(void);
const char* fnat_last_error(void);
void fnat_string_free(char* s);

/* Command-level entry points. config_json is a merged run configuration
 * (sections "model", "train", "task", "refine", "paths" plus top-level
 * seed/workers/arch/batch_size); every artifact-producing command echoes the
 * merged config as run_config.json next to its outputs. `message_out` (when
 * non-NULL) receives the human-readable summary or the JSON report. */
fnat_rc fnat_generate_data(const char* config_json, char** message_out);
fnat_rc fnat_train(const char* config_json, char** message_out);
fnat_rc fnat_decode(const char* config_json, char** message_out);
fnat_rc fnat_evaluate(const char* hyps_path, const char* refs_path, const char* out_dir,
                      char** report_json_out);
fnat_rc fnat_benchmark(const char* config_json, char** report_json_out);
fnat_rc fnat_distill(const char* config_json, char** message_out);

/* Runs the invariant battery; per-check status lines land in report_out.
 * Returns FNAT_E_CHECK when any check fails. */
fnat_rc fnat_selfcheck(char** report_out);

/* Opaque model handle for embedding decoding directly. */
typedef struct fnat_model fnat_model;

fnat_rc fnat_model_load(const char* checkpoint_path, fnat_model** model_out);
void fnat_model_free(fnat_model* model);
fnat_rc fnat_model_config(const fnat_model* model, char** config_json_out);

/* Parallel decode of one source sequence with optional refinement passes.
 * tokens_out must hold at least t_max ints; confidences_out (when non-NULL)
 * t_max doubles. *length_out receives the predicted length. */
fnat_rc fnat_model_decode(const fnat_model* model, const int32_t* src, size_t src_len, int passes,
                          double mask_ratio, int32_t* tokens_out, size_t* length_out,
                          double* confidences_out, int* passes_out);

#ifdef __cplusplus
}
#endif

#endif /* FNAT_CAPI_H */

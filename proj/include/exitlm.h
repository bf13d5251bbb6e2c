#pragma once

/* C API for the exitlm early-exit language-model engine.
 *
 * All state lives behind an opaque context created from key=value config
 * text (same grammar as the CLI config file). Every call returns a status
 * code; the message for the most recent failure on a context is available
 * from exitlm_last_error. Strings returned through out parameters are owned
 * by the caller and must be released with exitlm_free. */

#ifdef __cplusplus
extern "C" {
#endif

typedef struct exitlm_ctx exitlm_ctx;

typedef enum exitlm_status {
    EXITLM_OK = 0,
    EXITLM_ERR_INVALID_ARGUMENT = 1,
    EXITLM_ERR_CAPACITY = 2,
    EXITLM_ERR_POLICY = 3,
    EXITLM_ERR_CONFIG = 4,
    EXITLM_ERR_TRAINING = 5,
    EXITLM_ERR_CHECKPOINT = 6,
    EXITLM_ERR_IO = 7,
    EXITLM_ERR_UNKNOWN = 8
} exitlm_status;

const char * exitlm_version(void);
const char * exitlm_status_name(exitlm_status s);

/* config_text may be NULL or empty for all defaults. On failure *out_ctx is
 * NULL and exitlm_last_error(NULL) carries the message. */
exitlm_status exitlm_ctx_create(const char * config_text, exitlm_ctx ** out_ctx);
void exitlm_ctx_destroy(exitlm_ctx * ctx);

/* Message of the most recent failed call on ctx; never NULL. Pass NULL for
 * the most recent exitlm_ctx_create failure on this thread. */
const char * exitlm_last_error(const exitlm_ctx * ctx);

/* Override one config key on an existing context. */
exitlm_status exitlm_set(exitlm_ctx * ctx, const char * key, const char * value);

/* Write the deterministic bundled corpus to the configured corpus path. */
exitlm_status exitlm_make_corpus(exitlm_ctx * ctx);

/* Train and checkpoint into the configured output directory. The optional
 * out parameter receives the final training loss. */
exitlm_status exitlm_train_backbone(exitlm_ctx * ctx, double * out_final_loss);
exitlm_status exitlm_train_exits(exitlm_ctx * ctx, double * out_final_loss);

/* Greedy generation from the stored checkpoints. prompt may be NULL to use
 * the configured prompt; max_new <= 0 uses the configured length. Optional
 * out parameters receive the operation reduction factor and the mean
 * exit depth of the generated tokens. */
exitlm_status exitlm_generate(exitlm_ctx * ctx, const char * prompt, int max_new,
                              char ** out_text, double * out_reduction_factor,
                              double * out_mean_exit_depth);

/* Threshold/policy sweep (plus pruning baseline) and the standalone pruning
 * evaluation. Both write CSV and SVG reports; *out_csv_path names the CSV. */
exitlm_status exitlm_sweep(exitlm_ctx * ctx, char ** out_csv_path);
exitlm_status exitlm_prune_eval(exitlm_ctx * ctx, char ** out_csv_path);

void exitlm_free(char * p);

#ifdef __cplusplus
}
#endif

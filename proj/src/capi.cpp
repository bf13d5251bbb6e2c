#include "exitlm.h"

#include "harness.hpp"

#include <cstring>
#include <string>

using namespace exitlm;

struct exitlm_ctx {
    RunConfig rc;
    std::string last_error;
};

namespace {

thread_local std::string g_create_error;

exitlm_status status_of(errc c) {
    switch (c) {
        case errc::invalid_argument: return EXITLM_ERR_INVALID_ARGUMENT;
        case errc::capacity: return EXITLM_ERR_CAPACITY;
        case errc::policy: return EXITLM_ERR_POLICY;
        case errc::config: return EXITLM_ERR_CONFIG;
        case errc::training: return EXITLM_ERR_TRAINING;
        case errc::checkpoint: return EXITLM_ERR_CHECKPOINT;
        case errc::io: return EXITLM_ERR_IO;
    }
    return EXITLM_ERR_UNKNOWN;
}

// Runs fn, capturing any library error into the ctx message slot.
template <typename Fn>
exitlm_status guarded(exitlm_ctx * ctx, Fn && fn) {
    if (!ctx) {
        g_create_error = "null context";
        return EXITLM_ERR_INVALID_ARGUMENT;
    }
    try {
        ctx->last_error.clear();
        fn();
        return EXITLM_OK;
    } catch (const error & e) {
        ctx->last_error = e.what();
        return status_of(e.code());
    } catch (const std::exception & e) {
        ctx->last_error = e.what();
        return EXITLM_ERR_UNKNOWN;
    }
}

char * dup_string(const std::string & s) {
    char * p = new char[s.size() + 1];
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

} // namespace

extern "C" {

const char * exitlm_version(void) { return "exitlm 1.0.0"; }

const char * exitlm_status_name(exitlm_status s) {
    switch (s) {
        case EXITLM_OK: return "ok";
        case EXITLM_ERR_INVALID_ARGUMENT: return "invalid_argument";
        case EXITLM_ERR_CAPACITY: return "capacity";
        case EXITLM_ERR_POLICY: return "policy";
        case EXITLM_ERR_CONFIG: return "config";
        case EXITLM_ERR_TRAINING: return "training";
        case EXITLM_ERR_CHECKPOINT: return "checkpoint";
        case EXITLM_ERR_IO: return "io";
        case EXITLM_ERR_UNKNOWN: return "unknown";
    }
    return "unknown";
}

exitlm_status exitlm_ctx_create(const char * config_text, exitlm_ctx ** out_ctx) {
    if (!out_ctx) {
        g_create_error = "out_ctx is null";
        return EXITLM_ERR_INVALID_ARGUMENT;
    }
    *out_ctx = nullptr;
    try {
        RunConfig rc = parse_run_config(config_text ? config_text : "");
        *out_ctx = new exitlm_ctx{std::move(rc), {}};
        g_create_error.clear();
        return EXITLM_OK;
    } catch (const error & e) {
        g_create_error = e.what();
        return status_of(e.code());
    } catch (const std::exception & e) {
        g_create_error = e.what();
        return EXITLM_ERR_UNKNOWN;
    }
}

void exitlm_ctx_destroy(exitlm_ctx * ctx) { delete ctx; }

const char * exitlm_last_error(const exitlm_ctx * ctx) {
    return ctx ? ctx->last_error.c_str() : g_create_error.c_str();
}

exitlm_status exitlm_set(exitlm_ctx * ctx, const char * key, const char * value) {
    return guarded(ctx, [&] {
        if (!key || !value) fail(errc::invalid_argument, "null key or value");
        ctx->rc.apply(key, value);
    });
}

exitlm_status exitlm_make_corpus(exitlm_ctx * ctx) {
    return guarded(ctx, [&] { cmd_make_corpus(ctx->rc); });
}

exitlm_status exitlm_train_backbone(exitlm_ctx * ctx, double * out_final_loss) {
    return guarded(ctx, [&] {
        const TrainReport rep = cmd_train_backbone(ctx->rc);
        if (out_final_loss) *out_final_loss = rep.loss.empty() ? 0.0 : rep.loss.back();
    });
}

exitlm_status exitlm_train_exits(exitlm_ctx * ctx, double * out_final_loss) {
    return guarded(ctx, [&] {
        const TrainReport rep = cmd_train_exits(ctx->rc);
        if (out_final_loss) *out_final_loss = rep.loss.empty() ? 0.0 : rep.loss.back();
    });
}

exitlm_status exitlm_generate(exitlm_ctx * ctx, const char * prompt, int max_new, char ** out_text,
                              double * out_reduction_factor, double * out_mean_exit_depth) {
    return guarded(ctx, [&] {
        RunConfig rc = ctx->rc;
        if (prompt) rc.prompt = prompt;
        if (max_new > 0) rc.max_new = max_new;
        std::string text;
        const GenerationResult g = cmd_generate(rc, &text);
        if (out_text) *out_text = dup_string(text);
        if (out_reduction_factor) {
            *out_reduction_factor = reduction_factor(g.ledger, rc.include_prefill);
        }
        if (out_mean_exit_depth) {
            double sum = 0.0;
            for (int d : g.exit_depths) sum += d;
            *out_mean_exit_depth =
                g.exit_depths.empty() ? 0.0 : sum / (double) g.exit_depths.size();
        }
    });
}

exitlm_status exitlm_sweep(exitlm_ctx * ctx, char ** out_csv_path) {
    return guarded(ctx, [&] {
        std::string path;
        cmd_sweep(ctx->rc, &path);
        if (out_csv_path) *out_csv_path = dup_string(path);
    });
}

exitlm_status exitlm_prune_eval(exitlm_ctx * ctx, char ** out_csv_path) {
    return guarded(ctx, [&] {
        std::string path;
        cmd_prune_eval(ctx->rc, &path);
        if (out_csv_path) *out_csv_path = dup_string(path);
    });
}

void exitlm_free(char * p) { delete[] p; }

} // extern "C"

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

// exercises the shared library strictly through the public C header
#include "exitlm.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

std::string slurp(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct ctx_guard {
    exitlm_ctx * p = nullptr;
    ~ctx_guard() { exitlm_ctx_destroy(p); }
};

} // namespace

TEST_CASE("version and status names") {
    const std::string v = exitlm_version();
    CHECK(v.rfind("exitlm ", 0) == 0);
    CHECK(std::string(exitlm_status_name(EXITLM_OK)) == "ok");
    CHECK(std::string(exitlm_status_name(EXITLM_ERR_INVALID_ARGUMENT)) == "invalid_argument");
    CHECK(std::string(exitlm_status_name(EXITLM_ERR_CAPACITY)) == "capacity");
    CHECK(std::string(exitlm_status_name(EXITLM_ERR_POLICY)) == "policy");
    CHECK(std::string(exitlm_status_name(EXITLM_ERR_CONFIG)) == "config");
    CHECK(std::string(exitlm_status_name(EXITLM_ERR_TRAINING)) == "training");
    CHECK(std::string(exitlm_status_name(EXITLM_ERR_CHECKPOINT)) == "checkpoint");
    CHECK(std::string(exitlm_status_name(EXITLM_ERR_IO)) == "io");
    CHECK(std::string(exitlm_status_name(EXITLM_ERR_UNKNOWN)) == "unknown");
}

TEST_CASE("context lifecycle and create-time errors") {
    ctx_guard g;
    CHECK(exitlm_ctx_create(nullptr, &g.p) == EXITLM_OK);
    REQUIRE(g.p != nullptr);
    CHECK(std::string(exitlm_last_error(g.p)).empty());

    exitlm_ctx * bad = (exitlm_ctx *) 0x1;
    CHECK(exitlm_ctx_create("zap = 1\n", &bad) == EXITLM_ERR_CONFIG);
    CHECK(bad == nullptr);
    CHECK(std::string(exitlm_last_error(nullptr)).find("unknown config key 'zap'") !=
          std::string::npos);

    // config text is validated as a whole at create time
    CHECK(exitlm_ctx_create("window = 1\n", &bad) == EXITLM_ERR_CONFIG);
    CHECK(std::string(exitlm_last_error(nullptr)).find("window must be at least 2") !=
          std::string::npos);

    CHECK(exitlm_ctx_create("seed = 3\n", nullptr) == EXITLM_ERR_INVALID_ARGUMENT);
    CHECK(std::string(exitlm_last_error(nullptr)) == "out_ctx is null");

    exitlm_ctx_destroy(nullptr); // must be a safe no-op
    exitlm_free(nullptr);
}

TEST_CASE("per-context error slot tracks the most recent call") {
    ctx_guard g;
    REQUIRE(exitlm_ctx_create("", &g.p) == EXITLM_OK);

    CHECK(exitlm_set(g.p, "zap", "1") == EXITLM_ERR_CONFIG);
    CHECK(std::string(exitlm_last_error(g.p)).find("unknown config key 'zap'") !=
          std::string::npos);

    CHECK(exitlm_set(g.p, nullptr, "1") == EXITLM_ERR_INVALID_ARGUMENT);
    CHECK(std::string(exitlm_last_error(g.p)) == "null key or value");

    CHECK(exitlm_set(g.p, "d_model", "32") == EXITLM_OK);
    CHECK(std::string(exitlm_last_error(g.p)).empty()); // success clears the slot

    // null context is rejected rather than dereferenced
    CHECK(exitlm_set(nullptr, "d_model", "32") == EXITLM_ERR_INVALID_ARGUMENT);

    // errors raised deep in a command surface with the right status class
    CHECK(exitlm_set(g.p, "out_dir", "capi_test_tmp/nowhere") == EXITLM_OK);
    CHECK(exitlm_generate(g.p, nullptr, 0, nullptr, nullptr, nullptr) == EXITLM_ERR_IO);
    CHECK(std::string(exitlm_last_error(g.p)).find("backbone.manifest") != std::string::npos);

    CHECK(exitlm_set(g.p, "window", "1") == EXITLM_OK); // not validated until a command runs
    CHECK(exitlm_train_backbone(g.p, nullptr) == EXITLM_ERR_CONFIG);
    CHECK(std::string(exitlm_last_error(g.p)).find("window must be at least 2") !=
          std::string::npos);
}

TEST_CASE("end-to-end run through the shared library") {
    std::filesystem::remove_all("capi_test_tmp");
    const char * cfg = "backbone = transformer\n"
                       "n_blocks = 4\n"
                       "d_model = 16\n"
                       "n_heads = 2\n"
                       "max_seq_len = 128\n"
                       "exit_variant = linear\n"
                       "n_exits = 1\n"
                       "steps_backbone = 25\n"
                       "steps_exits = 10\n"
                       "window = 32\n"
                       "lr_backbone = 1e-3\n"
                       "lr_exits = 1e-2\n"
                       "seed = 91\n"
                       "theta_grid = 0.5,0.9\n"
                       "prune_levels = 0,1\n"
                       "eval_windows = 2\n"
                       "eval_window_len = 48\n"
                       "gen_prompts = 1\n"
                       "gen_prompt_len = 8\n"
                       "gen_max_new = 12\n"
                       "prompt = The river\n"
                       "max_new = 24\n"
                       "corpus = capi_test_tmp/corpus.txt\n"
                       "out_dir = capi_test_tmp/run\n"
                       "corpus_min_bytes = 4000\n";
    ctx_guard g;
    REQUIRE(exitlm_ctx_create(cfg, &g.p) == EXITLM_OK);

    REQUIRE(exitlm_make_corpus(g.p) == EXITLM_OK);
    CHECK(std::filesystem::file_size("capi_test_tmp/corpus.txt") >= 4000);

    double loss = -1.0;
    REQUIRE(exitlm_train_backbone(g.p, &loss) == EXITLM_OK);
    CHECK(std::isfinite(loss));
    CHECK(loss < std::log(257.0)); // even a short run beats the uniform baseline
    CHECK(std::filesystem::exists("capi_test_tmp/run/backbone.bin"));

    double exit_loss = -1.0;
    REQUIRE(exitlm_train_exits(g.p, &exit_loss) == EXITLM_OK);
    CHECK(std::isfinite(exit_loss));
    CHECK(std::filesystem::exists("capi_test_tmp/run/exits.bin"));

    char * text = nullptr;
    double rf = 0.0, depth = 0.0;
    REQUIRE(exitlm_generate(g.p, nullptr, 0, &text, &rf, &depth) == EXITLM_OK);
    REQUIRE(text != nullptr);
    CHECK(std::string(text).rfind("The river", 0) == 0);
    CHECK(std::string(text).size() > strlen("The river"));
    exitlm_free(text);
    CHECK(rf > 0.0);
    CHECK(depth >= 2.0);
    CHECK(depth <= 4.0);

    // explicit prompt and length override the configured ones
    text = nullptr;
    REQUIRE(exitlm_generate(g.p, "Morning fog", 5, &text, nullptr, nullptr) == EXITLM_OK);
    CHECK(std::string(text).rfind("Morning fog", 0) == 0);
    exitlm_free(text);

    char * csv = nullptr;
    REQUIRE(exitlm_sweep(g.p, &csv) == EXITLM_OK);
    REQUIRE(csv != nullptr);
    const std::string csv_path = csv;
    exitlm_free(csv);
    CHECK(csv_path == "capi_test_tmp/run/sweep.csv");
    const std::string body = slurp(csv_path);
    CHECK(body.rfind("config_id,backbone,exit_variant,policy,theta,prune_p,", 0) == 0);
    // 1 header + 2 prune levels + 2 policies x 2 thetas
    CHECK(std::count(body.begin(), body.end(), '\n') == 7);
    CHECK(slurp("capi_test_tmp/run/sweep.svg").rfind("<svg", 0) == 0);

    csv = nullptr;
    REQUIRE(exitlm_prune_eval(g.p, &csv) == EXITLM_OK);
    REQUIRE(csv != nullptr);
    CHECK(std::string(csv) == "capi_test_tmp/run/prune.csv");
    exitlm_free(csv);
}

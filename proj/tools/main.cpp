#include <CLI11.hpp>
#include <exitlm.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace {

int fail_with(exitlm_ctx * ctx, exitlm_status st) {
    std::fprintf(stderr, "error (%s): %s\n", exitlm_status_name(st), exitlm_last_error(ctx));
    exitlm_ctx_destroy(ctx);
    return (int) st;
}

bool read_config_file(const std::string & path, std::string & out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    out.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return true;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"desk-scale early-exit byte-level language models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(exitlm_version()));

    std::string config_file;
    std::vector<std::string> sets;
    std::string prompt;
    int max_new = 0;

    const auto add_common = [&](CLI::App * cmd) {
        cmd->add_option("-c,--config", config_file, "config file with key=value lines");
        cmd->add_option("-s,--set", sets, "override one config key, e.g. --set seed=7");
    };

    CLI::App * c_corpus = app.add_subcommand("make-corpus", "write the bundled training corpus");
    CLI::App * c_tb = app.add_subcommand("train-backbone", "train the byte-level backbone");
    CLI::App * c_te = app.add_subcommand("train-exits", "train the exit classifier bank");
    CLI::App * c_gen = app.add_subcommand("generate", "generate text from the checkpoints");
    CLI::App * c_sweep =
        app.add_subcommand("sweep", "threshold/policy sweep with CSV and SVG reports");
    CLI::App * c_prune = app.add_subcommand("prune-eval", "layer-pruning baseline evaluation");
    for (CLI::App * cmd : {c_corpus, c_tb, c_te, c_gen, c_sweep, c_prune}) add_common(cmd);
    c_gen->add_option("-p,--prompt", prompt, "prompt text (default from config)");
    c_gen->add_option("-n,--max-new", max_new, "tokens to generate (default from config)");

    CLI11_PARSE(app, argc, argv);

    std::string config_text;
    if (!config_file.empty()) {
        if (!read_config_file(config_file, config_text)) {
            std::fprintf(stderr, "error (io): cannot open config file %s\n", config_file.c_str());
            return (int) EXITLM_ERR_IO;
        }
        config_text += "\n";
    }
    for (const std::string & kv : sets) config_text += kv + "\n";

    exitlm_ctx * ctx = nullptr;
    exitlm_status st = exitlm_ctx_create(config_text.c_str(), &ctx);
    if (st != EXITLM_OK) return fail_with(nullptr, st);

    if (app.got_subcommand(c_corpus)) {
        st = exitlm_make_corpus(ctx);
        if (st != EXITLM_OK) return fail_with(ctx, st);
        std::printf("corpus written\n");
    } else if (app.got_subcommand(c_tb)) {
        double loss = 0.0;
        st = exitlm_train_backbone(ctx, &loss);
        if (st != EXITLM_OK) return fail_with(ctx, st);
        std::printf("backbone trained, final loss %.6f\n", loss);
    } else if (app.got_subcommand(c_te)) {
        double loss = 0.0;
        st = exitlm_train_exits(ctx, &loss);
        if (st != EXITLM_OK) return fail_with(ctx, st);
        std::printf("exit classifiers trained, final loss %.6f\n", loss);
    } else if (app.got_subcommand(c_gen)) {
        char * text = nullptr;
        double rf = 0.0, depth = 0.0;
        st = exitlm_generate(ctx, prompt.empty() ? nullptr : prompt.c_str(), max_new, &text, &rf,
                             &depth);
        if (st != EXITLM_OK) return fail_with(ctx, st);
        std::printf("%s\n", text);
        std::fprintf(stderr, "reduction factor %.3f, mean exit depth %.2f\n", rf, depth);
        exitlm_free(text);
    } else if (app.got_subcommand(c_sweep)) {
        char * path = nullptr;
        st = exitlm_sweep(ctx, &path);
        if (st != EXITLM_OK) return fail_with(ctx, st);
        std::printf("wrote %s\n", path);
        exitlm_free(path);
    } else if (app.got_subcommand(c_prune)) {
        char * path = nullptr;
        st = exitlm_prune_eval(ctx, &path);
        if (st != EXITLM_OK) return fail_with(ctx, st);
        std::printf("wrote %s\n", path);
        exitlm_free(path);
    }

    exitlm_ctx_destroy(ctx);
    return 0;
}

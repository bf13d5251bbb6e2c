#pragma once

#include "engine.hpp"
#include "training.hpp"

#include <string>
#include <vector>

namespace exitlm {

constexpr int k_bos_id = 256;

// Byte-level ids 0..255 plus BOS 256, prepended once. Round-trips exactly.
std::vector<int> tokenize(const std::string & bytes);
std::string detokenize(const std::vector<int> & ids);

// Everything one run needs, parsed from key=value lines ('#' starts a
// comment). Unknown keys are configuration errors.
struct RunConfig {
    // backbone
    std::string backbone = "transformer";
    int n_blocks = 8, d_model = 64, n_heads = 4, max_seq_len = 512;
    int d_state = 16, d_conv = 4, n_groups = 1;
    // exits
    std::string exit_variant = "linear";
    int n_exits = 4;
    std::vector<int> placements;  // empty = evenly spaced defaults
    int cls_d_state = 8, cls_d_conv = 4, cls_n_groups = 1;
    // training
    int steps_backbone = 600, steps_exits = 300, window = 64, batch = 1, k = 1;
    double lr_backbone = 3e-4, lr_exits = 3e-4;
    uint64_t seed = 1234;
    // sweep and evaluation
    std::vector<double> theta_grid = {0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99};
    std::string policies = "auto";  // comma list; auto = both policies of the backbone
    std::vector<int> prune_levels = {0, 1, 2, 3, 4};
    int eval_windows = 3, eval_window_len = 96;
    int gen_prompts = 8, gen_prompt_len = 16, gen_max_new = 48;
    int degen_run = 10;
    double degen_max_frac = 0.05;
    double rep_penalty = 1.2;
    std::string rep = "auto";  // off | on | auto (mamba skip mode only)
    bool include_prefill = false;
    // single generation
    std::string mode = "exits";   // full | exits | pruned
    double theta = 0.9;
    std::string policy = "auto";  // auto = copy for transformer, skip for mamba
    int prune_p = 0;
    std::string prompt = "The river keeps ";
    int max_new = 160;
    // paths
    std::string corpus = "corpus.txt";
    std::string out_dir = "runs";
    int corpus_min_bytes = 120000;
    std::string config_id;  // empty = "<backbone>-<variant>-s<seed>"

    void apply(const std::string & key, const std::string & value);
    void validate() const;
    ModelConfig model_config() const;
    ExitsConfig exits_config() const;
    std::string id() const;
};

RunConfig parse_run_config(const std::string & text);

// Checkpoints: flat little-endian float64 tensor archive (<stem>.bin) plus a
// plain-text manifest (<stem>.manifest) with format version, config echo and
// per-tensor name/shape/byte-offset lines.
void save_backbone(const ModelParams & m, const std::string & dir);
ModelParams load_backbone(const std::string & dir);
void save_exits(const ExitBank & bank, const ModelConfig & mc, const std::string & dir);
ExitBank load_exits(const ModelConfig & mc, const std::string & dir);

// Deterministic public-domain-style filler text, cycled to at least min_bytes.
void make_corpus(const std::string & path, int min_bytes);

// Raw byte ids (no BOS): first 90% for training, last 10% held out.
struct CorpusData {
    std::vector<int> train, eval;
};
CorpusData load_corpus(const std::string & path);

struct SweepRecord {
    std::string config_id, backbone, exit_variant, policy;
    double theta = -1.0;  // negative = not applicable (prune rows)
    int prune_p = -1;     // negative = not applicable (exit rows)
    double accuracy = 0.0, perplexity = 0.0, reduction_factor = 0.0;
    double ops_backbone = 0.0, ops_classifiers = 0.0, ops_recompute = 0.0;
    double mean_exit_depth = 0.0, degenerate_fraction = 0.0;
    bool valid = true;
};

// CSV (pinned column order, rows sorted by reduction factor) and scatter SVG
// (valid rows only, one series per policy) as strings, for exact tests.
std::string sweep_csv(const std::vector<SweepRecord> & records);
std::string sweep_svg(const std::vector<SweepRecord> & records, const std::string & title);

// Subcommand bodies, shared by the C API and tests.
void cmd_make_corpus(const RunConfig & rc);
TrainReport cmd_train_backbone(const RunConfig & rc);
TrainReport cmd_train_exits(const RunConfig & rc);
GenerationResult cmd_generate(const RunConfig & rc, std::string * out_text);
std::vector<SweepRecord> cmd_sweep(const RunConfig & rc, std::string * out_csv_path);
std::vector<SweepRecord> cmd_prune_eval(const RunConfig & rc, std::string * out_csv_path);

} // namespace exitlm

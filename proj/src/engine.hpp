#pragma once

#include "exits.hpp"
#include "ledger.hpp"
#include "model.hpp"

namespace exitlm {

// full: every block for every token. exits: confidence-gated block loop with a
// missing-state policy. pruned: blocks {N-1-p .. N-2} bypassed as identity.
enum class run_mode { full, exits, pruned };

const char * run_mode_name(run_mode m);

struct GenerationRequest {
    std::vector<int> prompt;  // nonempty; harness prompts start with BOS
    int max_new = 32;
    run_mode mode = run_mode::full;
    double theta = 0.9;  // any value > 1 acts as a never-exit sentinel
    missing_state_policy policy = missing_state_policy::kv_copy;
    int prune_p = 0;
    double rep_penalty = 1.2;
    rep_mode rep = rep_mode::auto_skip;
    int degen_run = 10;
};

struct GenerationResult {
    std::vector<int> ids;          // generated ids, prompt excluded
    std::vector<int> exit_depths;  // per token: placement index, N-p, or N
    ComputeLedger ledger;
    bool degenerate = false;
};

struct EvalRequest {
    run_mode mode = run_mode::full;
    double theta = 0.9;
    missing_state_policy policy = missing_state_policy::kv_copy;
    int prune_p = 0;
};

struct EvalResult {
    double accuracy = 0.0;
    double perplexity = 0.0;
    double mean_exit_depth = 0.0;
    int positions = 0;       // scored next-token predictions
    int decoded_tokens = 0;  // exit-gated decode steps behind those predictions
    ComputeLedger ledger;
};

// One autoregressive stream. Owns its caches, recurrent states, classifier
// states and ledger; model and classifier parameters are shared and read-only.
class InferenceStream {
  public:
    InferenceStream(const ModelParams & m, const ExitBank * bank, run_mode mode, double theta,
                    missing_state_policy policy, int prune_p);

    // Full-depth pass over the prompt (exits never fire here). Returns the
    // last position's logits. Must be called exactly once, first.
    std::vector<double> prefill(const std::vector<int> & prompt);

    // One exit-gated token. Returns next-token logits; the depth this token
    // reached is available from last_depth().
    std::vector<double> decode(int token_id);

    int last_depth() const { return last_depth_; }
    int position() const { return pos_; }
    const ComputeLedger & ledger() const { return led_; }

  private:
    std::vector<double> head_logits(const Tensor & h_row);
    double block_step_cost() const;
    bool block_disabled(int b) const;

    const ModelParams & m_;
    const ExitBank * bank_;
    run_mode mode_;
    double theta_;
    missing_state_policy policy_;
    int prune_p_;
    KVCache kv_;
    std::vector<MambaCellState> ssm_;
    ExitStreamState cls_;
    ComputeLedger led_;
    int pos_ = 0;  // tokens absorbed so far (prompt + decoded)
    int last_depth_ = 0;
    bool prefilled_ = false;
};

// CTRL-style penalty: for each id present in the history, a positive logit is
// divided by the factor and a non-positive one multiplied by it. Applied once
// per distinct id.
void repetition_penalty(std::vector<double> & logits, const std::vector<int> & history,
                        double factor);

// True iff some id repeats at least run_length times consecutively.
bool degenerate_check(const std::vector<int> & ids, int run_length);

GenerationResult generate(const ModelParams & m, const ExitBank * bank,
                          const GenerationRequest & req);

// Teacher-forced scoring. Each window starts with BOS; the first token is
// prefilled at full depth, the rest are exit-gated decodes, and every
// prediction is scored against the next window token. One fresh stream per
// window; ledgers are merged. No repetition penalty here.
EvalResult evaluate_teacher_forced(const ModelParams & m, const ExitBank * bank,
                                   const std::vector<std::vector<int>> & windows,
                                   const EvalRequest & req);

} // namespace exitlm

#pragma once

#include "model.hpp"

namespace exitlm {

// One 2-way exit/continue classifier. Logit index 1 is "exit"; confidence is
// softmax(logits)[1]. Only the fields of the active variant are defined.
struct ExitClassifierParams {
    exit_variant variant = exit_variant::linear;
    Tensor w, b;            // linear: d_model x 2, 2
    Tensor w1, b1, w2, b2;  // ffn: d_model x 4d, 4d, 4d x 2, 2
    MambaCellParams cell;   // mamba: full cell at d_model with d_out = 2, no residual
};

struct ExitBank {
    ExitsConfig cfg;
    std::vector<int> placements;  // strictly increasing block indices
    std::vector<ExitClassifierParams> classifiers;
};

// Evenly spaced placements over [ceil(N/2), N-2], clamped to what fits.
std::vector<int> default_placements(int n_blocks, int count);
void validate_placements(const std::vector<int> & placements, int n_blocks);

ExitBank make_exit_bank(const ModelConfig & model_cfg, const ExitsConfig & cfg, uint64_t seed);

// Per-generation-stream classifier state: one recurrent cell per placement
// for the mamba variant, empty otherwise.
struct ExitStreamState {
    std::vector<MambaCellState> cells;
};

ExitStreamState make_exit_stream_state(const ExitBank & bank);

// Confidence of one classifier on a normalized hidden row [1 x d]. The mamba
// variant advances its cell state once per call and requires `st`.
// Linear classifier math is counted as excluded (its ledger charge is zero by
// the cost model); the other variants count into the classifier channel.
double confidence(const ExitClassifierParams & c, const Tensor & h_norm, MambaCellState * st);

// Training-time parallel form over T positions: logits [T x 2]. Differentiable.
Tensor classifier_logits_scan(const ExitClassifierParams & c, const Tensor & h_norm);

// Inclusive threshold rule: exit as soon as confidence reaches theta.
inline bool should_exit(double theta, double conf) { return conf >= theta; }

// Analytic per-evaluation charge. The linear head is free by fiat, the ffn
// charge is the published 16 d^2 approximation, and the mamba cell charge is
// its exact matmul count (the block formula with a 2-wide output projection).
double classifier_cost(exit_variant v, int d_model, int cls_groups, int cls_state);

std::vector<Tensor> trainable_params(const ExitBank & bank);
void visit_params(const ExitBank & bank,
                  const std::function<void(const std::string &, Tensor)> & fn);

} // namespace exitlm

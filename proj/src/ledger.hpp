#pragma once

#include "common.hpp"

#include <cstdint>

namespace exitlm {

// Analytic per-block costs. Units follow each backbone's published formula:
// transformer costs are 2 ops per multiply-accumulate, mamba costs are MACs.

// full causal block over a T-token prefill: 24*T*d^2 + 4*T^2*d
double cost_block_transformer(int T, int d_model);

// one decoded token attending over t_context rows (the fresh token included):
// 24*d^2 + 4*t_context*d
double cost_decode_step_transformer(int t_context, int d_model);

// one token through one mamba block: 6*d^2 + 2*n_groups*d_state*d
double cost_block_mamba(int d_model, int n_groups, int d_state);

// key/value projections only, 1/6 of the block's context-free decode cost
double transformer_partial_charge(int d_model);

// conv + SSM state update, 9/26 of the block cost. The fraction is adopted
// verbatim as a ledger parameter; it is not re-derived from the block terms.
double mamba_partial_charge(int d_model, int n_groups, int d_state);

// Per-stream operation accounting. The decode-phase counters cover the
// exit-gated tokens; prefill is tracked separately and folded in only when
// the caller asks for it. `reference` is what the full model would have spent
// on the same tokens, so an exit-free run reduces by exactly 1.
struct ComputeLedger {
    double backbone = 0.0;
    double classifiers = 0.0;
    double recompute = 0.0;
    double reference = 0.0;
    double prefill_backbone = 0.0;
    double prefill_reference = 0.0;
    uint64_t tokens = 0;  // decode-phase tokens

    void merge(const ComputeLedger & other);
};

double reduction_factor(const ComputeLedger & ledger, bool include_prefill = false);

} // namespace exitlm

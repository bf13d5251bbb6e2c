#pragma once

#include "autodiff.hpp"
#include "config.hpp"

#include <vector>

namespace exitlm {

// One selective-SSM cell: norm -> input/gate/B/C projections -> depthwise
// causal conv -> SiLU -> SSM -> gated output projection. The backbone block
// is a cell with d_out == d_model plus a residual; the mamba exit classifier
// is the same cell with d_out == 2 and no residual.
struct MambaCellDims {
    int d_in = 0, d_inner = 0, d_state = 0, n_groups = 1, d_conv = 4, d_out = 0;
    int g_width() const { return n_groups * d_state; }
};

struct MambaCellParams {
    MambaCellDims dims;
    Tensor norm_gain;     // d_in
    Tensor w_x, w_z;      // d_in x d_inner
    Tensor w_b, w_c;      // d_in x (n_groups*d_state)
    Tensor conv_w;        // d_inner x d_conv
    Tensor a_log;         // d_inner; A = -exp(a_log), so decay stays in (0,1)
    Tensor d_skip;        // d_inner
    Tensor dt_w, dt_b;    // d_inner; delta = softplus(dt_w*x + dt_b), elementwise
    Tensor w_o;           // d_inner x d_out
};

MambaCellParams make_mamba_cell(const MambaCellDims & dims, rng & r);

struct MambaCellState {
    std::vector<double> conv_window;  // d_inner x d_conv, window[c][j] = input at t-K+1+j
    std::vector<double> x;            // d_inner x d_state
    int steps = 0;
};

MambaCellState make_cell_state(const MambaCellDims & dims);

MambaCellDims backbone_cell_dims(const ModelConfig & cfg);

// Parallel form over T tokens from a zero state. Differentiable.
Tensor mamba_cell_scan(const MambaCellParams & p, const Tensor & x);

// Recurrent form, one token; mutates the state. Bitwise equal to the scan.
Tensor mamba_cell_step(const MambaCellParams & p, const Tensor & x, MambaCellState & st);

// Missing-state recomputation: advance conv window and recurrent state only
// (input and B projections; no gate, no readout, no output projection).
// Leaves the state bit-identical to a full step on the same token.
void mamba_cell_state_update(const MambaCellParams & p, const Tensor & x, MambaCellState & st);

// Backbone block = cell + residual.
Tensor mamba_block_scan(const MambaCellParams & p, const Tensor & h);
Tensor mamba_block_step(const MambaCellParams & p, const Tensor & h, MambaCellState & st);
void mamba_partial_forward(const MambaCellParams & p, const Tensor & h, MambaCellState & st);
void mamba_state_skip(MambaCellState & st);

} // namespace exitlm

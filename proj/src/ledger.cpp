#include "ledger.hpp"

namespace exitlm {

double cost_block_transformer(int T, int d_model) {
    const double t = T, d = d_model;
    return 24.0 * t * d * d + 4.0 * t * t * d;
}

double cost_decode_step_transformer(int t_context, int d_model) {
    const double t = t_context, d = d_model;
    return 24.0 * d * d + 4.0 * t * d;
}

double cost_block_mamba(int d_model, int n_groups, int d_state) {
    const double d = d_model;
    return 6.0 * d * d + 2.0 * n_groups * d_state * d;
}

double transformer_partial_charge(int d_model) {
    return cost_decode_step_transformer(0, d_model) / 6.0;
}

double mamba_partial_charge(int d_model, int n_groups, int d_state) {
    return 9.0 / 26.0 * cost_block_mamba(d_model, n_groups, d_state);
}

void ComputeLedger::merge(const ComputeLedger & other) {
    backbone += other.backbone;
    classifiers += other.classifiers;
    recompute += other.recompute;
    reference += other.reference;
    prefill_backbone += other.prefill_backbone;
    prefill_reference += other.prefill_reference;
    tokens += other.tokens;
}

double reduction_factor(const ComputeLedger & ledger, bool include_prefill) {
    if (ledger.tokens < 1) fail(errc::invalid_argument, "accounting: no tokens processed");
    double num = ledger.reference;
    double den = ledger.backbone + ledger.classifiers + ledger.recompute;
    if (include_prefill) {
        num += ledger.prefill_reference;
        den += ledger.prefill_backbone;
    }
    if (den <= 0.0) fail(errc::invalid_argument, "accounting: zero operation total");
    return num / den;
}

} // namespace exitlm

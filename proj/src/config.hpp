#pragma once

#include "common.hpp"

#include <string>
#include <vector>

namespace exitlm {

enum class backbone_kind { transformer, mamba };

enum class exit_variant { linear, ffn, mamba };

// Missing-state treatment for blocks skipped by an early exit. The first two
// apply to Transformer KV caches, the last two to Mamba recurrent states.
enum class missing_state_policy { kv_copy, kv_recompute, ssm_skip, ssm_recompute };

enum class rep_mode { off, on, auto_skip };

// One flat config covers both backbones; fields irrelevant to the selected
// kind are ignored. d_ff and d_inner are fixed ratios of d_model so the
// analytic cost formulas and the architecture agree exactly.
struct ModelConfig {
    backbone_kind kind = backbone_kind::transformer;
    int n_blocks = 8;
    int d_model = 64;
    int vocab_size = 257;
    int max_seq_len = 512;
    // transformer
    int n_heads = 4;
    // mamba
    int d_state = 16;
    int d_conv = 4;
    int n_groups = 1;

    int d_ff() const { return 4 * d_model; }
    int d_inner() const { return 2 * d_model; }

    void validate() const;
};

// Operation units per multiply-accumulate. The transformer cost formula is
// written in 2-ops-per-MAC terms, the mamba one in MACs; the ledger adopts
// each backbone's own convention so the published constants hold verbatim.
inline int ops_per_mac(backbone_kind k) { return k == backbone_kind::transformer ? 2 : 1; }

struct ExitsConfig {
    exit_variant variant = exit_variant::linear;
    int n_exits = 4;              // requested count, clamped to the legal range
    std::vector<int> placements;  // explicit override; empty -> derived
    // mamba-cell classifier dims (cell runs at the backbone's d_model)
    int cls_d_state = 8;
    int cls_d_conv = 4;
    int cls_n_groups = 1;
};

struct TrainConfig {
    int steps = 600;
    int window = 64;  // input tokens per step, BOS included
    int batch = 1;
    int k = 1;  // top-k relaxation for oracle labels
    double lr = 3e-4;
    uint64_t seed = 1;
};

const char * backbone_name(backbone_kind k);
backbone_kind backbone_from(const std::string & s);

const char * variant_name(exit_variant v);
exit_variant variant_from(const std::string & s);

const char * policy_name(missing_state_policy p);
missing_state_policy policy_from(const std::string & s, backbone_kind k);

const char * rep_mode_name(rep_mode m);
rep_mode rep_mode_from(const std::string & s);

} // namespace exitlm

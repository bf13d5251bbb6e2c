#pragma once

#include "autodiff.hpp"
#include "config.hpp"

#include <vector>

namespace exitlm {

// Pre-norm residual decoder block. No biases anywhere; the analytic cost
// formula counts the eight d*d-scale matmuls and nothing else.
struct TransformerBlockParams {
    Tensor w_q, w_k, w_v, w_o;  // d_model x d_model
    Tensor w_ff1;               // d_model x d_ff
    Tensor w_ff2;               // d_ff x d_model
    Tensor gain_attn, gain_ffn; // d_model
};

TransformerBlockParams make_tf_block(const ModelConfig & cfg, rng & r);

// Per-block cache of key/value rows, row width d_model, capacity max_seq_len.
struct KVCacheBlock {
    std::vector<double> k, v;
    int fill = 0;
};

struct KVCache {
    std::vector<KVCacheBlock> blocks;
    int d = 0;
    int capacity = 0;
};

KVCache make_kv_cache(const ModelConfig & cfg);

// Full causal prefill of T tokens. Differentiable when a graph is active.
// cache may be null (training); when given it must be empty and is filled
// with all T key/value rows.
Tensor tf_block_prefill(const ModelConfig & cfg, const TransformerBlockParams & p,
                        const Tensor & h, KVCacheBlock * cache);

// One token attending over the cache plus itself; appends its key/value.
// Raw fast path, bitwise equal to the matching prefill position.
Tensor tf_block_decode_step(const ModelConfig & cfg, const TransformerBlockParams & p,
                            const Tensor & h, KVCacheBlock & cache);

// Missing-state recomputation: key/value projections of h only, appended to
// the cache. The hidden stream is not advanced.
void tf_kv_partial_forward(const ModelConfig & cfg, const TransformerBlockParams & p,
                           const Tensor & h, KVCacheBlock & cache);

// Missing-state copy: duplicate the source block's newest key/value row into
// each target block's cache. Targets must be exactly one row behind.
void tf_kv_copy_forward(KVCache & cache, int source_block, const std::vector<int> & targets);

} // namespace exitlm

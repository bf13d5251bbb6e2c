#pragma once

#include "mamba.hpp"
#include "transformer.hpp"

#include <functional>
#include <string>
#include <vector>

namespace exitlm {

// One backbone of either kind plus the shared embedding, final norm and head.
// The head starts at zero so an untrained model emits exactly uniform logits.
struct ModelParams {
    ModelConfig cfg;
    Tensor embedding;      // vocab_size x d_model
    Tensor pos_embedding;  // max_seq_len x d_model, transformer only
    std::vector<TransformerBlockParams> t_blocks;
    std::vector<MambaCellParams> m_blocks;
    Tensor final_norm_gain;  // d_model
    Tensor head;             // d_model x vocab_size
};

ModelParams make_model(const ModelConfig & cfg, uint64_t seed);

// Hidden states after each block, for oracle labeling and classifier inputs.
struct ForwardCapture {
    std::vector<Tensor> block_out;  // n_blocks entries of T x d_model
};

// Teacher-forced full forward (no caches, no exits): logits [T x vocab].
// Differentiable when a graph is active; the plain call is the fast path.
Tensor model_forward(const ModelParams & m, const std::vector<int> & ids,
                     ForwardCapture * cap = nullptr);

// Stable names for checkpoints; the visitor receives a shared handle, so
// writes through it land in the model.
void visit_params(const ModelParams & m,
                  const std::function<void(const std::string &, Tensor)> & fn);

std::vector<Tensor> trainable_params(const ModelParams & m);

} // namespace exitlm

#include "model.hpp"

namespace exitlm {

ModelParams make_model(const ModelConfig & cfg, uint64_t seed) {
    cfg.validate();
    rng r(seed);
    ModelParams m;
    m.cfg = cfg;
    m.embedding = Tensor::randn({cfg.vocab_size, cfg.d_model}, r, 0.02).set_requires_grad(true);
    if (cfg.kind == backbone_kind::transformer) {
        m.pos_embedding = Tensor::randn({cfg.max_seq_len, cfg.d_model}, r, 0.02).set_requires_grad(true);
        m.t_blocks.reserve((size_t) cfg.n_blocks);
        for (int i = 0; i < cfg.n_blocks; ++i) m.t_blocks.push_back(make_tf_block(cfg, r));
    } else {
        const MambaCellDims dims = backbone_cell_dims(cfg);
        m.m_blocks.reserve((size_t) cfg.n_blocks);
        for (int i = 0; i < cfg.n_blocks; ++i) m.m_blocks.push_back(make_mamba_cell(dims, r));
    }
    m.final_norm_gain = Tensor::full({cfg.d_model}, 1.0).set_requires_grad(true);
    m.head = Tensor::zeros({cfg.d_model, cfg.vocab_size}).set_requires_grad(true);
    return m;
}

Tensor model_forward(const ModelParams & m, const std::vector<int> & ids, ForwardCapture * cap) {
    const ModelConfig & cfg = m.cfg;
    const int t_len = (int) ids.size();
    if (t_len < 1) fail(errc::invalid_argument, "forward: empty token stream");
    if (t_len > cfg.max_seq_len) {
        fail(errc::capacity, "forward length " + std::to_string(t_len) + " exceeds max_seq_len " +
                                 std::to_string(cfg.max_seq_len));
    }
    Tensor h = embedding_rows(m.embedding, ids);
    if (cfg.kind == backbone_kind::transformer) {
        std::vector<int> pos((size_t) t_len);
        for (int i = 0; i < t_len; ++i) pos[(size_t) i] = i;
        h = add(h, embedding_rows(m.pos_embedding, pos));
        for (const auto & blk : m.t_blocks) {
            h = tf_block_prefill(cfg, blk, h, nullptr);
            if (cap) cap->block_out.push_back(h);
        }
    } else {
        for (const auto & blk : m.m_blocks) {
            h = mamba_block_scan(blk, h);
            if (cap) cap->block_out.push_back(h);
        }
    }
    return matmul(rms_norm(h, m.final_norm_gain), m.head);
}

void visit_params(const ModelParams & m,
                  const std::function<void(const std::string &, Tensor)> & fn) {
    fn("embedding", m.embedding);
    if (m.cfg.kind == backbone_kind::transformer) {
        fn("pos_embedding", m.pos_embedding);
        for (size_t i = 0; i < m.t_blocks.size(); ++i) {
            const std::string b = "block" + std::to_string(i) + ".";
            const TransformerBlockParams & p = m.t_blocks[i];
            fn(b + "w_q", p.w_q);
            fn(b + "w_k", p.w_k);
            fn(b + "w_v", p.w_v);
            fn(b + "w_o", p.w_o);
            fn(b + "w_ff1", p.w_ff1);
            fn(b + "w_ff2", p.w_ff2);
            fn(b + "gain_attn", p.gain_attn);
            fn(b + "gain_ffn", p.gain_ffn);
        }
    } else {
        for (size_t i = 0; i < m.m_blocks.size(); ++i) {
            const std::string b = "block" + std::to_string(i) + ".";
            const MambaCellParams & p = m.m_blocks[i];
            fn(b + "norm_gain", p.norm_gain);
            fn(b + "w_x", p.w_x);
            fn(b + "w_z", p.w_z);
            fn(b + "w_b", p.w_b);
            fn(b + "w_c", p.w_c);
            fn(b + "conv_w", p.conv_w);
            fn(b + "a_log", p.a_log);
            fn(b + "d_skip", p.d_skip);
            fn(b + "dt_w", p.dt_w);
            fn(b + "dt_b", p.dt_b);
            fn(b + "w_o", p.w_o);
        }
    }
    fn("final_norm.gain", m.final_norm_gain);
    fn("head", m.head);
}

std::vector<Tensor> trainable_params(const ModelParams & m) {
    std::vector<Tensor> out;
    visit_params(m, [&out](const std::string &, Tensor t) { out.push_back(t); });
    return out;
}

} // namespace exitlm

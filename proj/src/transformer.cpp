#include "transformer.hpp"

#include <cmath>
#include <cstring>

namespace exitlm {

TransformerBlockParams make_tf_block(const ModelConfig & cfg, rng & r) {
    const int d = cfg.d_model, f = cfg.d_ff();
    TransformerBlockParams p;
    p.w_q = Tensor::randn({d, d}, r, 0.02).set_requires_grad(true);
    p.w_k = Tensor::randn({d, d}, r, 0.02).set_requires_grad(true);
    p.w_v = Tensor::randn({d, d}, r, 0.02).set_requires_grad(true);
    p.w_o = Tensor::randn({d, d}, r, 0.02).set_requires_grad(true);
    p.w_ff1 = Tensor::randn({d, f}, r, 0.02).set_requires_grad(true);
    p.w_ff2 = Tensor::randn({f, d}, r, 0.02).set_requires_grad(true);
    p.gain_attn = Tensor::full({d}, 1.0).set_requires_grad(true);
    p.gain_ffn = Tensor::full({d}, 1.0).set_requires_grad(true);
    return p;
}

KVCache make_kv_cache(const ModelConfig & cfg) {
    KVCache c;
    c.d = cfg.d_model;
    c.capacity = cfg.max_seq_len;
    c.blocks.resize((size_t) cfg.n_blocks);
    for (auto & b : c.blocks) {
        b.k.assign((size_t) c.capacity * c.d, 0.0);
        b.v.assign((size_t) c.capacity * c.d, 0.0);
        b.fill = 0;
    }
    return c;
}

namespace {

void append_row(KVCacheBlock & cache, int d, int capacity, const double * krow, const double * vrow) {
    if (cache.fill >= capacity) {
        fail(errc::capacity, "kv cache full at " + std::to_string(cache.fill) + " rows");
    }
    std::memcpy(cache.k.data() + (size_t) cache.fill * d, krow, sizeof(double) * (size_t) d);
    std::memcpy(cache.v.data() + (size_t) cache.fill * d, vrow, sizeof(double) * (size_t) d);
    cache.fill += 1;
}

} // namespace

Tensor tf_block_prefill(const ModelConfig & cfg, const TransformerBlockParams & p,
                        const Tensor & h, KVCacheBlock * cache) {
    const int t_len = h.rows(), d = cfg.d_model, nh = cfg.n_heads, dk = d / nh;
    if (h.cols() != d) fail(errc::invalid_argument, "prefill: hidden width " + h.shape_str());
    if (t_len > cfg.max_seq_len) {
        fail(errc::capacity, "prefill length " + std::to_string(t_len) + " exceeds max_seq_len " +
                                 std::to_string(cfg.max_seq_len));
    }
    if (cache && cache->fill != 0) fail(errc::invalid_argument, "prefill: cache not empty");

    Tensor xn = rms_norm(h, p.gain_attn);
    Tensor q = matmul(xn, p.w_q);
    Tensor k = matmul(xn, p.w_k);
    Tensor v = matmul(xn, p.w_v);
    if (cache) {
        for (int t = 0; t < t_len; ++t) {
            append_row(*cache, d, cfg.max_seq_len, k.data() + (size_t) t * d, v.data() + (size_t) t * d);
        }
    }

    const double s = 1.0 / std::sqrt((double) dk);
    std::vector<Tensor> heads;
    heads.reserve((size_t) nh);
    for (int i = 0; i < nh; ++i) {
        Tensor qi = slice_cols(q, i * dk, (i + 1) * dk);
        Tensor ki = slice_cols(k, i * dk, (i + 1) * dk);
        Tensor vi = slice_cols(v, i * dk, (i + 1) * dk);
        Tensor att = softmax_rows(causal_mask(scale(matmul_nt(qi, ki), s)));
        heads.push_back(matmul(att, vi));
    }
    Tensor h1 = add(h, matmul(concat_cols(heads), p.w_o));

    Tensor x2 = rms_norm(h1, p.gain_ffn);
    Tensor ff = matmul(silu(matmul(x2, p.w_ff1)), p.w_ff2);
    return add(h1, ff);
}

Tensor tf_block_decode_step(const ModelConfig & cfg, const TransformerBlockParams & p,
                            const Tensor & h, KVCacheBlock & cache) {
    const int d = cfg.d_model, nh = cfg.n_heads, dk = d / nh, f = cfg.d_ff();
    if (h.rows() != 1 || h.cols() != d) {
        fail(errc::invalid_argument, "decode step: want [1x" + std::to_string(d) + "], got " + h.shape_str());
    }

    std::vector<double> xn(d), q(d), k(d), v(d);
    rms_norm_row_raw(h.data(), p.gain_attn.data(), xn.data(), d, k_norm_eps);
    matmul_raw(xn.data(), p.w_q.data(), q.data(), 1, d, d);
    matmul_raw(xn.data(), p.w_k.data(), k.data(), 1, d, d);
    matmul_raw(xn.data(), p.w_v.data(), v.data(), 1, d, d);
    append_row(cache, d, cfg.max_seq_len, k.data(), v.data());
    const int t = cache.fill;

    const double s = 1.0 / std::sqrt((double) dk);
    std::vector<double> kh((size_t) t * dk), vh((size_t) t * dk), att(t), attn(d);
    for (int i = 0; i < nh; ++i) {
        for (int r = 0; r < t; ++r) {
            std::memcpy(kh.data() + (size_t) r * dk, cache.k.data() + (size_t) r * d + i * dk,
                        sizeof(double) * (size_t) dk);
            std::memcpy(vh.data() + (size_t) r * dk, cache.v.data() + (size_t) r * d + i * dk,
                        sizeof(double) * (size_t) dk);
        }
        matmul_nt_raw(q.data() + i * dk, kh.data(), att.data(), 1, dk, t);
        for (int r = 0; r < t; ++r) att[(size_t) r] *= s;
        softmax_row_raw(att.data(), t);
        matmul_raw(att.data(), vh.data(), attn.data() + i * dk, 1, t, dk);
    }

    std::vector<double> proj(d);
    matmul_raw(attn.data(), p.w_o.data(), proj.data(), 1, d, d);
    Tensor h1 = Tensor::zeros({1, d});
    for (int j = 0; j < d; ++j) h1.at(j) = h.at(j) + proj[(size_t) j];

    std::vector<double> x2(d), mid(f), ff(d);
    rms_norm_row_raw(h1.data(), p.gain_ffn.data(), x2.data(), d, k_norm_eps);
    matmul_raw(x2.data(), p.w_ff1.data(), mid.data(), 1, d, f);
    for (int j = 0; j < f; ++j) mid[(size_t) j] = silu_raw(mid[(size_t) j]);
    matmul_raw(mid.data(), p.w_ff2.data(), ff.data(), 1, f, d);
    Tensor out = Tensor::zeros({1, d});
    for (int j = 0; j < d; ++j) out.at(j) = h1.at(j) + ff[(size_t) j];
    return out;
}

void tf_kv_partial_forward(const ModelConfig & cfg, const TransformerBlockParams & p,
                           const Tensor & h, KVCacheBlock & cache) {
    const int d = cfg.d_model;
    std::vector<double> xn(d), k(d), v(d);
    rms_norm_row_raw(h.data(), p.gain_attn.data(), xn.data(), d, k_norm_eps);
    matmul_raw(xn.data(), p.w_k.data(), k.data(), 1, d, d);
    matmul_raw(xn.data(), p.w_v.data(), v.data(), 1, d, d);
    append_row(cache, d, cfg.max_seq_len, k.data(), v.data());
}

void tf_kv_copy_forward(KVCache & cache, int source_block, const std::vector<int> & targets) {
    KVCacheBlock & src = cache.blocks[(size_t) source_block];
    if (src.fill < 1) fail(errc::policy, "kv copy: source block has no cached row");
    const int row = src.fill - 1, d = cache.d;
    for (int b : targets) {
        KVCacheBlock & dst = cache.blocks[(size_t) b];
        if (dst.fill != row) {
            fail(errc::policy, "kv copy: block " + std::to_string(b) + " fill " +
                                   std::to_string(dst.fill) + ", expected " + std::to_string(row));
        }
        append_row(dst, d, cache.capacity, src.k.data() + (size_t) row * d,
                   src.v.data() + (size_t) row * d);
    }
}

} // namespace exitlm

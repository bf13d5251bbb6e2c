#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "testutil.hpp"

#include "exits.hpp"
#include "mamba.hpp"
#include "transformer.hpp"

#include <cmath>

using namespace exitlm;
using namespace testutil;

// every check: central differences, step 1e-5, relative error < 1e-4

TEST_CASE("matmul chain gradients") {
    rng r(101);
    Tensor a = Tensor::randn({3, 4}, r, 0.5).set_requires_grad(true);
    Tensor b = Tensor::randn({4, 5}, r, 0.5).set_requires_grad(true);
    Tensor c = Tensor::randn({2, 5}, r, 0.5).set_requires_grad(true);
    std::vector<double> w = rand_vec(6, r);
    auto fwd = [&] { return weighted_sum(matmul(a, matmul_nt(b, c)), w); };
    CHECK(finite_diff_gap(fwd, {a, b, c}) < 1e-4);
}

TEST_CASE("elementwise op gradients") {
    rng r(102);
    Tensor x = Tensor::randn({2, 6}, r, 0.8).set_requires_grad(true);
    Tensor y = Tensor::randn({2, 6}, r, 0.8).set_requires_grad(true);
    std::vector<double> w = rand_vec(12, r);
    auto fwd = [&] {
        Tensor t = add(mul(silu(x), y), scale(exp_t(neg(x)), 0.3));
        return weighted_sum(add(t, softplus(y)), w);
    };
    CHECK(finite_diff_gap(fwd, {x, y}) < 1e-4);
}

TEST_CASE("softmax and causal mask gradients") {
    rng r(103);
    Tensor q = Tensor::randn({4, 3}, r, 0.7).set_requires_grad(true);
    Tensor k = Tensor::randn({4, 3}, r, 0.7).set_requires_grad(true);
    std::vector<double> w = rand_vec(16, r);
    auto fwd = [&] { return weighted_sum(softmax_rows(causal_mask(matmul_nt(q, k))), w); };
    CHECK(finite_diff_gap(fwd, {q, k}) < 1e-4);
}

TEST_CASE("rms_norm gradients for input and gain") {
    rng r(104);
    Tensor x = Tensor::randn({3, 5}, r, 1.0).set_requires_grad(true);
    Tensor gain = Tensor::randn({5}, r, 0.5).set_requires_grad(true);
    std::vector<double> w = rand_vec(15, r);
    auto fwd = [&] { return weighted_sum(rms_norm(x, gain), w); };
    CHECK(finite_diff_gap(fwd, {x, gain}) < 1e-4);
}

TEST_CASE("slice and concat gradients") {
    rng r(105);
    Tensor x = Tensor::randn({2, 8}, r, 1.0).set_requires_grad(true);
    std::vector<double> w = rand_vec(16, r);
    auto fwd = [&] {
        Tensor left = slice_cols(x, 0, 3), right = slice_cols(x, 3, 8);
        return weighted_sum(concat_cols({right, left}), w);
    };
    CHECK(finite_diff_gap(fwd, {x}) < 1e-4);
}

TEST_CASE("channel scale/shift gradients") {
    rng r(106);
    Tensor x = Tensor::randn({3, 4}, r, 1.0).set_requires_grad(true);
    Tensor s = Tensor::randn({4}, r, 0.5).set_requires_grad(true);
    Tensor b = Tensor::randn({4}, r, 0.5).set_requires_grad(true);
    std::vector<double> w = rand_vec(12, r);
    auto fwd = [&] { return weighted_sum(add_channels(scale_channels(x, s), b), w); };
    CHECK(finite_diff_gap(fwd, {x, s, b}) < 1e-4);
}

TEST_CASE("embedding gather gradients") {
    rng r(107);
    Tensor table = Tensor::randn({6, 4}, r, 1.0).set_requires_grad(true);
    std::vector<int> ids = {2, 0, 2, 5};
    std::vector<double> w = rand_vec(16, r);
    auto fwd = [&] { return weighted_sum(embedding_rows(table, ids), w); };
    CHECK(finite_diff_gap(fwd, {table}) < 1e-4);
}

TEST_CASE("causal conv gradients") {
    rng r(108);
    Tensor x = Tensor::randn({5, 3}, r, 1.0).set_requires_grad(true);
    Tensor cw = Tensor::randn({3, 4}, r, 0.5).set_requires_grad(true);
    std::vector<double> w = rand_vec(15, r);
    auto fwd = [&] { return weighted_sum(conv1d_causal(x, cw), w); };
    CHECK(finite_diff_gap(fwd, {x, cw}) < 1e-4);
}

TEST_CASE("cross entropy gradients") {
    rng r(109);
    Tensor logits = Tensor::randn({4, 5}, r, 1.0).set_requires_grad(true);
    std::vector<int> labels = {1, 4, 0, 2};
    auto fwd = [&] { return cross_entropy_logits(logits, labels); };
    CHECK(finite_diff_gap(fwd, {logits}) < 1e-4);
}

TEST_CASE("ssm_scan gradients through every input") {
    rng r(110);
    const int T = 5, di = 6, ds = 3, ng = 2;
    Tensor u = Tensor::randn({T, di}, r, 0.8).set_requires_grad(true);
    Tensor B = Tensor::randn({T, ng * ds}, r, 0.8).set_requires_grad(true);
    Tensor C = Tensor::randn({T, ng * ds}, r, 0.8).set_requires_grad(true);
    Tensor A = Tensor::randn({di}, r, 0.5).set_requires_grad(true);
    Tensor D = Tensor::randn({di}, r, 0.5).set_requires_grad(true);
    // keep delta strictly positive under the +-1e-5 probes
    Tensor pre = Tensor::randn({T, di}, r, 0.8).set_requires_grad(true);
    std::vector<double> w = rand_vec((size_t) T * di, r);
    auto fwd = [&] {
        Tensor delta = softplus(pre);
        Tensor a_neg = neg(exp_t(A));
        return weighted_sum(ssm_scan(u, B, C, delta, a_neg, D, ds, ng), w);
    };
    CHECK(finite_diff_gap(fwd, {u, B, C, A, D, pre}) < 1e-4);
}

TEST_CASE("ssm_scan rejects nonpositive step sizes") {
    const int T = 2, di = 2, ds = 2;
    Tensor u = Tensor::zeros({T, di});
    Tensor B = Tensor::zeros({T, ds}), C = Tensor::zeros({T, ds});
    Tensor A = Tensor::full({di}, -1.0), D = Tensor::zeros({di});
    Tensor delta = Tensor::full({T, di}, 0.0);
    expect_error(errc::invalid_argument, {"ssm_scan", "nonpositive"},
                 [&] { ssm_scan(u, B, C, delta, A, D, ds, 1); });
}

TEST_CASE("attention block composite gradients") {
    rng r(111);
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_blocks = 1;
    cfg.max_seq_len = 16;
    TransformerBlockParams p = make_tf_block(cfg, r);
    Tensor h = Tensor::randn({3, 8}, r, 0.8).set_requires_grad(true);
    std::vector<double> w = rand_vec(24, r);
    auto fwd = [&] { return weighted_sum(tf_block_prefill(cfg, p, h, nullptr), w); };
    std::vector<Tensor> params = {h, p.w_q, p.w_k, p.w_v, p.w_o, p.w_ff1, p.w_ff2, p.gain_attn, p.gain_ffn};
    CHECK(finite_diff_gap(fwd, params) < 1e-4);
}

TEST_CASE("mamba cell composite gradients") {
    rng r(112);
    MambaCellDims dims;
    dims.d_in = 6;
    dims.d_inner = 12;
    dims.d_state = 4;
    dims.n_groups = 2;
    dims.d_conv = 3;
    dims.d_out = 6;
    MambaCellParams p = make_mamba_cell(dims, r);
    Tensor h = Tensor::randn({3, 6}, r, 0.8).set_requires_grad(true);
    std::vector<double> w = rand_vec(18, r);
    auto fwd = [&] { return weighted_sum(mamba_block_scan(p, h), w); };
    std::vector<Tensor> params = {h,     p.norm_gain, p.w_x,    p.w_z,  p.w_b, p.w_c,
                                  p.conv_w, p.a_log,  p.d_skip, p.dt_w, p.dt_b, p.w_o};
    CHECK(finite_diff_gap(fwd, params) < 1e-4);
}

TEST_CASE("classifier head gradients for all three variants") {
    ModelConfig mc;
    mc.d_model = 8;
    mc.n_heads = 2;
    for (const char * name : {"linear", "ffn", "mamba"}) {
        ExitsConfig ec;
        ec.variant = variant_from(name);
        ec.n_exits = 1;
        ec.cls_d_state = 4;
        ec.cls_d_conv = 3;
        ec.cls_n_groups = 2;
        ExitBank bank = make_exit_bank(mc, ec, 99);
        rng r(113);
        Tensor h = Tensor::randn({4, 8}, r, 0.9).set_requires_grad(true);
        std::vector<int> labels = {1, 0, 1, 1};
        auto fwd = [&] {
            return cross_entropy_logits(classifier_logits_scan(bank.classifiers[0], h), labels);
        };
        std::vector<Tensor> params = trainable_params(bank);
        params.push_back(h);
        CAPTURE(name);
        CHECK(finite_diff_gap(fwd, params) < 1e-4);
    }
}

TEST_CASE("gradients accumulate across reuse of one tensor") {
    rng r(114);
    Tensor x = Tensor::randn({2, 2}, r, 0.7).set_requires_grad(true);
    std::vector<double> w = rand_vec(4, r);
    auto fwd = [&] { return weighted_sum(add(mul(x, x), scale(x, 0.5)), w); };
    CHECK(finite_diff_gap(fwd, {x}) < 1e-4);
}

TEST_CASE("backward is a single reverse sweep (grads not double counted)") {
    Tensor x = Tensor::from({1, 2}, {2.0, 3.0}).set_requires_grad(true);
    Graph g;
    {
        graph_scope scope(g);
        Tensor loss = weighted_sum(x, {1.0, 1.0});
        grad_of(g, loss, {x});
    }
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 1.0);
}

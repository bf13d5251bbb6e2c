#include "exits.hpp"

#include <cmath>

namespace exitlm {

std::vector<int> default_placements(int n_blocks, int count) {
    const int lo = (n_blocks + 1) / 2, hi = n_blocks - 2;
    if (count < 1) fail(errc::config, "exit count must be >= 1");
    if (hi < lo) {
        fail(errc::config, "backbone of " + std::to_string(n_blocks) + " blocks has no legal exit placements");
    }
    const int avail = hi - lo + 1;
    const int m = count < avail ? count : avail;
    std::vector<int> out;
    if (m == avail) {
        for (int i = lo; i <= hi; ++i) out.push_back(i);
    } else if (m == 1) {
        out.push_back(lo);
    } else {
        for (int i = 0; i < m; ++i) {
            out.push_back(lo + (int) std::llround((double) i * (hi - lo) / (m - 1)));
        }
    }
    return out;
}

void validate_placements(const std::vector<int> & placements, int n_blocks) {
    if (placements.empty()) fail(errc::config, "empty exit placement list");
    const int lo = (n_blocks + 1) / 2, hi = n_blocks - 2;
    int prev = -1;
    for (int p : placements) {
        if (p < lo || p > hi) {
            fail(errc::config, "exit placement " + std::to_string(p) + " outside [" +
                                   std::to_string(lo) + ", " + std::to_string(hi) + "]");
        }
        if (p <= prev) fail(errc::config, "exit placements must be strictly increasing");
        prev = p;
    }
}

ExitBank make_exit_bank(const ModelConfig & model_cfg, const ExitsConfig & cfg, uint64_t seed) {
    ExitBank bank;
    bank.cfg = cfg;
    bank.placements = cfg.placements.empty() ? default_placements(model_cfg.n_blocks, cfg.n_exits)
                                             : cfg.placements;
    validate_placements(bank.placements, model_cfg.n_blocks);

    rng r(seed);
    const int d = model_cfg.d_model;
    for (size_t i = 0; i < bank.placements.size(); ++i) {
        ExitClassifierParams c;
        c.variant = cfg.variant;
        switch (cfg.variant) {
            case exit_variant::linear:
                c.w = Tensor::randn({d, 2}, r, 0.02).set_requires_grad(true);
                c.b = Tensor::zeros({2}).set_requires_grad(true);
                break;
            case exit_variant::ffn:
                c.w1 = Tensor::randn({d, 4 * d}, r, 0.02).set_requires_grad(true);
                c.b1 = Tensor::zeros({4 * d}).set_requires_grad(true);
                c.w2 = Tensor::randn({4 * d, 2}, r, 0.02).set_requires_grad(true);
                c.b2 = Tensor::zeros({2}).set_requires_grad(true);
                break;
            case exit_variant::mamba: {
                MambaCellDims dims;
                dims.d_in = d;
                dims.d_inner = 2 * d;
                dims.d_state = cfg.cls_d_state;
                dims.n_groups = cfg.cls_n_groups;
                dims.d_conv = cfg.cls_d_conv;
                dims.d_out = 2;
                c.cell = make_mamba_cell(dims, r);
                break;
            }
        }
        bank.classifiers.push_back(std::move(c));
    }
    return bank;
}

ExitStreamState make_exit_stream_state(const ExitBank & bank) {
    ExitStreamState st;
    if (bank.cfg.variant == exit_variant::mamba) {
        for (const auto & c : bank.classifiers) st.cells.push_back(make_cell_state(c.cell.dims));
    }
    return st;
}

double confidence(const ExitClassifierParams & c, const Tensor & h_norm, MambaCellState * st) {
    double logits[2];
    if (c.variant == exit_variant::linear) {
        mac_scope scope(mac_channel::excluded);
        const int d = c.w.dim(0);
        matmul_raw(h_norm.data(), c.w.data(), logits, 1, d, 2);
        logits[0] += c.b.at(0);
        logits[1] += c.b.at(1);
    } else if (c.variant == exit_variant::ffn) {
        mac_scope scope(mac_channel::classifier);
        const int d = c.w1.dim(0), f = c.w1.dim(1);
        std::vector<double> mid((size_t) f);
        matmul_raw(h_norm.data(), c.w1.data(), mid.data(), 1, d, f);
        for (int i = 0; i < f; ++i) mid[(size_t) i] = silu_raw(mid[(size_t) i] + c.b1.at((size_t) i));
        matmul_raw(mid.data(), c.w2.data(), logits, 1, f, 2);
        logits[0] += c.b2.at(0);
        logits[1] += c.b2.at(1);
    } else {
        if (!st) fail(errc::invalid_argument, "mamba classifier needs a per-stream state");
        mac_scope scope(mac_channel::classifier);
        Tensor y = mamba_cell_step(c.cell, h_norm, *st);
        logits[0] = y.at(0);
        logits[1] = y.at(1);
    }
    softmax_row_raw(logits, 2);
    return logits[1];
}

Tensor classifier_logits_scan(const ExitClassifierParams & c, const Tensor & h_norm) {
    switch (c.variant) {
        case exit_variant::linear:
            return add_channels(matmul(h_norm, c.w), c.b);
        case exit_variant::ffn:
            return add_channels(matmul(silu(add_channels(matmul(h_norm, c.w1), c.b1)), c.w2), c.b2);
        case exit_variant::mamba:
            return mamba_cell_scan(c.cell, h_norm);
    }
    fail(errc::invalid_argument, "unknown classifier variant");
}

double classifier_cost(exit_variant v, int d_model, int cls_groups, int cls_state) {
    const double d = d_model;
    switch (v) {
        case exit_variant::linear: return 0.0;
        case exit_variant::ffn:    return 16.0 * d * d;
        case exit_variant::mamba:  return 4.0 * d * d + 2.0 * cls_groups * cls_state * d + 4.0 * d;
    }
    fail(errc::invalid_argument, "unknown classifier variant");
}

namespace {

void visit_one(const ExitClassifierParams & c, const std::string & prefix,
               const std::function<void(const std::string &, Tensor)> & fn) {
    switch (c.variant) {
        case exit_variant::linear:
            fn(prefix + "w", c.w);
            fn(prefix + "b", c.b);
            break;
        case exit_variant::ffn:
            fn(prefix + "w1", c.w1);
            fn(prefix + "b1", c.b1);
            fn(prefix + "w2", c.w2);
            fn(prefix + "b2", c.b2);
            break;
        case exit_variant::mamba:
            fn(prefix + "cell.norm_gain", c.cell.norm_gain);
            fn(prefix + "cell.w_x", c.cell.w_x);
            fn(prefix + "cell.w_z", c.cell.w_z);
            fn(prefix + "cell.w_b", c.cell.w_b);
            fn(prefix + "cell.w_c", c.cell.w_c);
            fn(prefix + "cell.conv_w", c.cell.conv_w);
            fn(prefix + "cell.a_log", c.cell.a_log);
            fn(prefix + "cell.d_skip", c.cell.d_skip);
            fn(prefix + "cell.dt_w", c.cell.dt_w);
            fn(prefix + "cell.dt_b", c.cell.dt_b);
            fn(prefix + "cell.w_o", c.cell.w_o);
            break;
    }
}

} // namespace

void visit_params(const ExitBank & bank,
                  const std::function<void(const std::string &, Tensor)> & fn) {
    for (size_t i = 0; i < bank.classifiers.size(); ++i) {
        visit_one(bank.classifiers[i], "exit" + std::to_string(i) + ".", fn);
    }
}

std::vector<Tensor> trainable_params(const ExitBank & bank) {
    std::vector<Tensor> out;
    visit_params(bank, [&out](const std::string &, Tensor t) { out.push_back(t); });
    return out;
}

} // namespace exitlm

#include "autodiff.hpp"

#include <cmath>

namespace exitlm {

namespace {

thread_local Graph * g_graph = nullptr;

bool tracing(const Tensor & a) { return g_graph != nullptr && a.requires_grad(); }

void mark_output(Tensor & y, std::initializer_list<const Tensor *> inputs) {
    y.set_requires_grad(true);
    for (const Tensor * t : inputs) g_graph->note_input(t->id());
}

void accumulate(Tensor & t, const std::vector<double> & delta) {
    t.ensure_grad();
    double * g = t.grad();
    for (size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

void check_2d(const Tensor & t, const char * op) {
    if (t.ndim() != 2) fail(errc::invalid_argument, std::string(op) + ": expected 2D tensor, got " + t.shape_str());
}

} // namespace

Graph * active_graph() { return g_graph; }

graph_scope::graph_scope(Graph & g) : prev_(g_graph) { g_graph = &g; }
graph_scope::~graph_scope() { g_graph = prev_; }

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor & a, const Tensor & b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        fail(errc::invalid_argument,
             "matmul: dimension mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor y = Tensor::zeros({m, n});
    matmul_raw(a.data(), b.data(), y.data(), m, k, n);

    if (g_graph && (a.requires_grad() || b.requires_grad())) {
        mark_output(y, {&a, &b});
        Tensor ac = a, bc = b, yc = y;
        g_graph->add_node([ac, bc, yc, m, k, n]() mutable {
            yc.ensure_grad();
            if (ac.requires_grad()) {
                std::vector<double> tmp((size_t) m * k);
                matmul_nt_raw(yc.grad(), bc.data(), tmp.data(), m, n, k);
                accumulate(ac, tmp);
            }
            if (bc.requires_grad()) {
                std::vector<double> tmp((size_t) k * n);
                matmul_tn_raw(ac.data(), yc.grad(), tmp.data(), m, k, n);
                accumulate(bc, tmp);
            }
        });
    }
    return y;
}

Tensor matmul_nt(const Tensor & a, const Tensor & b) {
    check_2d(a, "matmul_nt");
    check_2d(b, "matmul_nt");
    if (a.dim(1) != b.dim(1)) {
        fail(errc::invalid_argument,
             "matmul_nt: dimension mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor y = Tensor::zeros({m, n});
    matmul_nt_raw(a.data(), b.data(), y.data(), m, k, n);

    if (g_graph && (a.requires_grad() || b.requires_grad())) {
        mark_output(y, {&a, &b});
        Tensor ac = a, bc = b, yc = y;
        g_graph->add_node([ac, bc, yc, m, k, n]() mutable {
            yc.ensure_grad();
            if (ac.requires_grad()) {
                // dA = dY * B
                std::vector<double> tmp((size_t) m * k);
                matmul_raw(yc.grad(), bc.data(), tmp.data(), m, n, k);
                accumulate(ac, tmp);
            }
            if (bc.requires_grad()) {
                // dB = dY^T * A
                std::vector<double> tmp((size_t) n * k);
                matmul_tn_raw(yc.grad(), ac.data(), tmp.data(), m, n, k);
                accumulate(bc, tmp);
            }
        });
    }
    return y;
}

namespace {

// shared scaffolding for elementwise unary ops with y = f(x), dx = df(x,y)*dy
template <typename F, typename DF>
Tensor unary_op(const Tensor & x, F f, DF df) {
    Tensor y = Tensor::zeros(x.shape());
    const double * xd = x.data();
    double * yd = y.data();
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) yd[i] = f(xd[i]);

    if (tracing(x)) {
        mark_output(y, {&x});
        Tensor xc = x, yc = y;
        g_graph->add_node([xc, yc, df]() mutable {
            yc.ensure_grad();
            xc.ensure_grad();
            const size_t n2 = xc.numel();
            for (size_t i = 0; i < n2; ++i) {
                xc.grad()[i] += df(xc.data()[i], yc.data()[i]) * yc.grad()[i];
            }
        });
    }
    return y;
}

} // namespace

Tensor add(const Tensor & a, const Tensor & b) {
    if (a.shape() != b.shape()) {
        fail(errc::invalid_argument, "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor y = Tensor::zeros(a.shape());
    const size_t n = y.numel();
    for (size_t i = 0; i < n; ++i) y.at(i) = a.at(i) + b.at(i);

    if (g_graph && (a.requires_grad() || b.requires_grad())) {
        mark_output(y, {&a, &b});
        Tensor ac = a, bc = b, yc = y;
        g_graph->add_node([ac, bc, yc]() mutable {
            yc.ensure_grad();
            if (ac.requires_grad()) accumulate(ac, yc.grad_vec());
            if (bc.requires_grad()) accumulate(bc, yc.grad_vec());
        });
    }
    return y;
}

Tensor mul(const Tensor & a, const Tensor & b) {
    if (a.shape() != b.shape()) {
        fail(errc::invalid_argument, "mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    Tensor y = Tensor::zeros(a.shape());
    const size_t n = y.numel();
    for (size_t i = 0; i < n; ++i) y.at(i) = a.at(i) * b.at(i);

    if (g_graph && (a.requires_grad() || b.requires_grad())) {
        mark_output(y, {&a, &b});
        Tensor ac = a, bc = b, yc = y;
        g_graph->add_node([ac, bc, yc]() mutable {
            yc.ensure_grad();
            const size_t n2 = yc.numel();
            if (ac.requires_grad()) {
                ac.ensure_grad();
                for (size_t i = 0; i < n2; ++i) ac.grad()[i] += bc.at(i) * yc.grad()[i];
            }
            if (bc.requires_grad()) {
                bc.ensure_grad();
                for (size_t i = 0; i < n2; ++i) bc.grad()[i] += ac.at(i) * yc.grad()[i];
            }
        });
    }
    return y;
}

Tensor scale(const Tensor & x, double c) {
    return unary_op(x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor exp_t(const Tensor & x) {
    return unary_op(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor neg(const Tensor & x) { return scale(x, -1.0); }

Tensor silu(const Tensor & x) {
    return unary_op(x, [](double v) { return silu_raw(v); },
                    [](double v, double) {
                        const double s = sigmoid_raw(v);
                        return s * (1.0 + v * (1.0 - s));
                    });
}

Tensor softplus(const Tensor & x) {
    return unary_op(x, [](double v) { return softplus_raw(v); },
                    [](double v, double) { return sigmoid_raw(v); });
}

Tensor softmax_rows(const Tensor & x) {
    const int m = x.rows(), n = x.cols();
    Tensor y = Tensor::zeros(x.shape());
    for (int i = 0; i < m; ++i) {
        const double * src = x.data() + (size_t) i * n;
        double * dst = y.data() + (size_t) i * n;
        for (int j = 0; j < n; ++j) dst[j] = src[j];
        softmax_row_raw(dst, n);
    }

    if (tracing(x)) {
        mark_output(y, {&x});
        Tensor xc = x, yc = y;
        g_graph->add_node([xc, yc, m, n]() mutable {
            yc.ensure_grad();
            xc.ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double * p = yc.data() + (size_t) i * n;
                const double * dy = yc.grad() + (size_t) i * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += dy[j] * p[j];
                double * dx = xc.grad() + (size_t) i * n;
                for (int j = 0; j < n; ++j) dx[j] += p[j] * (dy[j] - dot);
            }
        });
    }
    return y;
}

Tensor causal_mask(const Tensor & x) {
    check_2d(x, "causal_mask");
    if (x.dim(0) != x.dim(1)) {
        fail(errc::invalid_argument, "causal_mask: expected square scores, got " + x.shape_str());
    }
    const int t = x.dim(0);
    Tensor y = Tensor::zeros(x.shape());
    for (int i = 0; i < t; ++i) {
        for (int j = 0; j < t; ++j) {
            y.at2(i, j) = j > i ? -HUGE_VAL : x.at2(i, j);
        }
    }

    if (tracing(x)) {
        mark_output(y, {&x});
        Tensor xc = x, yc = y;
        g_graph->add_node([xc, yc, t]() mutable {
            yc.ensure_grad();
            xc.ensure_grad();
            for (int i = 0; i < t; ++i) {
                for (int j = 0; j <= i; ++j) {
                    xc.grad()[(size_t) i * t + j] += yc.grad()[(size_t) i * t + j];
                }
            }
        });
    }
    return y;
}

Tensor rms_norm(const Tensor & x, const Tensor & gain) {
    const int d = gain.dim(0);
    if (x.cols() != d) {
        fail(errc::invalid_argument,
             "rms_norm: row width " + x.shape_str() + " vs gain " + gain.shape_str());
    }
    const int m = x.rows();
    Tensor y = Tensor::zeros(x.shape());
    for (int i = 0; i < m; ++i) {
        rms_norm_row_raw(x.data() + (size_t) i * d, gain.data(), y.data() + (size_t) i * d, d, k_norm_eps);
    }

    if (g_graph && (x.requires_grad() || gain.requires_grad())) {
        mark_output(y, {&x, &gain});
        Tensor xc = x, gc = gain, yc = y;
        g_graph->add_node([xc, gc, yc, m, d]() mutable {
            yc.ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double * xr = xc.data() + (size_t) i * d;
                const double * dy = yc.grad() + (size_t) i * d;
                double ss = 0.0;
                for (int j = 0; j < d; ++j) ss += xr[j] * xr[j];
                const double s = 1.0 / std::sqrt(ss / d + k_norm_eps);
                if (xc.requires_grad()) {
                    xc.ensure_grad();
                    double dot = 0.0;
                    for (int j = 0; j < d; ++j) dot += dy[j] * gc.at(j) * xr[j];
                    const double k = s * s * s / d * dot;
                    double * dx = xc.grad() + (size_t) i * d;
                    for (int j = 0; j < d; ++j) dx[j] += s * gc.at(j) * dy[j] - k * xr[j];
                }
                if (gc.requires_grad()) {
                    gc.ensure_grad();
                    for (int j = 0; j < d; ++j) gc.grad()[j] += dy[j] * xr[j] * s;
                }
            }
        });
    }
    return y;
}

Tensor slice_cols(const Tensor & x, int c0, int c1) {
    check_2d(x, "slice_cols");
    const int m = x.dim(0), n = x.dim(1);
    if (c0 < 0 || c1 > n || c0 >= c1) {
        fail(errc::invalid_argument, "slice_cols: bad range [" + std::to_string(c0) + "," +
                                         std::to_string(c1) + ") for " + x.shape_str());
    }
    const int w = c1 - c0;
    Tensor y = Tensor::zeros({m, w});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < w; ++j) y.at2(i, j) = x.at2(i, c0 + j);
    }

    if (tracing(x)) {
        mark_output(y, {&x});
        Tensor xc = x, yc = y;
        g_graph->add_node([xc, yc, m, w, c0]() mutable {
            yc.ensure_grad();
            xc.ensure_grad();
            const int n2 = xc.dim(1);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < w; ++j) {
                    xc.grad()[(size_t) i * n2 + c0 + j] += yc.grad()[(size_t) i * w + j];
                }
            }
        });
    }
    return y;
}

Tensor concat_cols(const std::vector<Tensor> & parts) {
    if (parts.empty()) fail(errc::invalid_argument, "concat_cols: empty input");
    const int m = parts[0].dim(0);
    int n = 0;
    bool grad = false;
    for (const Tensor & p : parts) {
        check_2d(p, "concat_cols");
        if (p.dim(0) != m) fail(errc::invalid_argument, "concat_cols: row mismatch");
        n += p.dim(1);
        grad = grad || p.requires_grad();
    }
    Tensor y = Tensor::zeros({m, n});
    int off = 0;
    for (const Tensor & p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < w; ++j) y.at2(i, off + j) = p.at2(i, j);
        }
        off += w;
    }

    if (g_graph && grad) {
        y.set_requires_grad(true);
        for (const Tensor & p : parts) g_graph->note_input(p.id());
        std::vector<Tensor> pc = parts;
        Tensor yc = y;
        g_graph->add_node([pc, yc, m, n]() mutable {
            yc.ensure_grad();
            int off2 = 0;
            for (Tensor & p : pc) {
                const int w = p.dim(1);
                if (p.requires_grad()) {
                    p.ensure_grad();
                    for (int i = 0; i < m; ++i) {
                        for (int j = 0; j < w; ++j) {
                            p.grad()[(size_t) i * w + j] += yc.grad()[(size_t) i * n + off2 + j];
                        }
                    }
                }
                off2 += w;
            }
        });
    }
    return y;
}

Tensor scale_channels(const Tensor & x, const Tensor & w) {
    const int n = w.dim(0);
    if (x.cols() != n) {
        fail(errc::invalid_argument, "scale_channels: " + x.shape_str() + " vs " + w.shape_str());
    }
    const int m = x.rows();
    Tensor y = Tensor::zeros(x.shape());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) y.at(i * (size_t) n + j) = x.at(i * (size_t) n + j) * w.at(j);
    }

    if (g_graph && (x.requires_grad() || w.requires_grad())) {
        mark_output(y, {&x, &w});
        Tensor xc = x, wc = w, yc = y;
        g_graph->add_node([xc, wc, yc, m, n]() mutable {
            yc.ensure_grad();
            if (xc.requires_grad()) {
                xc.ensure_grad();
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) {
                        xc.grad()[(size_t) i * n + j] += wc.at(j) * yc.grad()[(size_t) i * n + j];
                    }
                }
            }
            if (wc.requires_grad()) {
                wc.ensure_grad();
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) {
                        wc.grad()[j] += xc.at((size_t) i * n + j) * yc.grad()[(size_t) i * n + j];
                    }
                }
            }
        });
    }
    return y;
}

Tensor add_channels(const Tensor & x, const Tensor & b) {
    const int n = b.dim(0);
    if (x.cols() != n) {
        fail(errc::invalid_argument, "add_channels: " + x.shape_str() + " vs " + b.shape_str());
    }
    const int m = x.rows();
    Tensor y = Tensor::zeros(x.shape());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) y.at((size_t) i * n + j) = x.at((size_t) i * n + j) + b.at(j);
    }

    if (g_graph && (x.requires_grad() || b.requires_grad())) {
        mark_output(y, {&x, &b});
        Tensor xc = x, bc = b, yc = y;
        g_graph->add_node([xc, bc, yc, m, n]() mutable {
            yc.ensure_grad();
            if (xc.requires_grad()) accumulate(xc, yc.grad_vec());
            if (bc.requires_grad()) {
                bc.ensure_grad();
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < n; ++j) bc.grad()[j] += yc.grad()[(size_t) i * n + j];
                }
            }
        });
    }
    return y;
}

Tensor embedding_rows(const Tensor & table, const std::vector<int> & ids) {
    check_2d(table, "embedding_rows");
    const int v = table.dim(0), d = table.dim(1);
    const int n = (int) ids.size();
    for (int id : ids) {
        if (id < 0 || id >= v) {
            fail(errc::invalid_argument, "embedding_rows: id " + std::to_string(id) +
                                             " outside vocab of " + std::to_string(v));
        }
    }
    Tensor y = Tensor::zeros({n, d});
    for (int i = 0; i < n; ++i) {
        const double * src = table.data() + (size_t) ids[(size_t) i] * d;
        double * dst = y.data() + (size_t) i * d;
        for (int j = 0; j < d; ++j) dst[j] = src[j];
    }

    if (tracing(table)) {
        mark_output(y, {&table});
        Tensor tc = table, yc = y;
        std::vector<int> idc = ids;
        g_graph->add_node([tc, yc, idc, n, d]() mutable {
            yc.ensure_grad();
            tc.ensure_grad();
            for (int i = 0; i < n; ++i) {
                double * dst = tc.grad() + (size_t) idc[(size_t) i] * d;
                const double * src = yc.grad() + (size_t) i * d;
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return y;
}

Tensor conv1d_causal(const Tensor & x, const Tensor & w) {
    check_2d(x, "conv1d_causal");
    check_2d(w, "conv1d_causal");
    const int t_len = x.dim(0), c_num = x.dim(1), k_len = w.dim(1);
    if (w.dim(0) != c_num) {
        fail(errc::invalid_argument, "conv1d_causal: " + x.shape_str() + " vs " + w.shape_str());
    }
    Tensor y = Tensor::zeros(x.shape());
    for (int t = 0; t < t_len; ++t) {
        for (int c = 0; c < c_num; ++c) {
            double acc = 0.0;
            for (int j = 0; j < k_len; ++j) {
                const int src = t - (k_len - 1) + j;
                if (src >= 0) acc += w.at2(c, j) * x.at2(src, c);
            }
            y.at2(t, c) = acc;
        }
    }

    if (g_graph && (x.requires_grad() || w.requires_grad())) {
        mark_output(y, {&x, &w});
        Tensor xc = x, wc = w, yc = y;
        g_graph->add_node([xc, wc, yc, t_len, c_num, k_len]() mutable {
            yc.ensure_grad();
            if (wc.requires_grad()) wc.ensure_grad();
            if (xc.requires_grad()) xc.ensure_grad();
            for (int t = 0; t < t_len; ++t) {
                for (int c = 0; c < c_num; ++c) {
                    const double dy = yc.grad()[(size_t) t * c_num + c];
                    for (int j = 0; j < k_len; ++j) {
                        const int src = t - (k_len - 1) + j;
                        if (src < 0) continue;
                        if (wc.requires_grad()) {
                            wc.grad()[(size_t) c * k_len + j] += dy * xc.at((size_t) src * c_num + c);
                        }
                        if (xc.requires_grad()) {
                            xc.grad()[(size_t) src * c_num + c] += dy * wc.at((size_t) c * k_len + j);
                        }
                    }
                }
            }
        });
    }
    return y;
}

Tensor cross_entropy_logits(const Tensor & logits, const std::vector<int> & labels) {
    check_2d(logits, "cross_entropy_logits");
    const int n = logits.dim(0), c = logits.dim(1);
    if ((int) labels.size() != n) {
        fail(errc::invalid_argument, "cross_entropy_logits: " + std::to_string(labels.size()) +
                                         " labels for " + logits.shape_str());
    }
    for (int l : labels) {
        if (l < 0 || l >= c) {
            fail(errc::invalid_argument,
                 "cross_entropy_logits: label " + std::to_string(l) + " outside [0," + std::to_string(c) + ")");
        }
    }
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double * z = logits.data() + (size_t) i * c;
        double mx = z[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, z[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += std::exp(z[j] - mx);
        loss += mx + std::log(sum) - z[labels[(size_t) i]];
    }
    Tensor y = Tensor::from({1}, {loss / n});

    if (tracing(logits)) {
        mark_output(y, {&logits});
        Tensor lc = logits, yc = y;
        std::vector<int> lb = labels;
        g_graph->add_node([lc, yc, lb, n, c]() mutable {
            yc.ensure_grad();
            lc.ensure_grad();
            const double g = yc.grad()[0] / n;
            for (int i = 0; i < n; ++i) {
                const double * z = lc.data() + (size_t) i * c;
                double mx = z[0];
                for (int j = 1; j < c; ++j) mx = std::max(mx, z[j]);
                double sum = 0.0;
                for (int j = 0; j < c; ++j) sum += std::exp(z[j] - mx);
                double * dz = lc.grad() + (size_t) i * c;
                for (int j = 0; j < c; ++j) {
                    const double p = std::exp(z[j] - mx) / sum;
                    dz[j] += g * (p - (j == lb[(size_t) i] ? 1.0 : 0.0));
                }
            }
        });
    }
    return y;
}

Tensor weighted_sum(const Tensor & x, const std::vector<double> & w) {
    if (x.numel() != w.size()) {
        fail(errc::invalid_argument, "weighted_sum: " + std::to_string(w.size()) +
                                         " weights for " + x.shape_str());
    }
    double acc = 0.0;
    for (size_t i = 0; i < w.size(); ++i) acc += x.at(i) * w[i];
    Tensor y = Tensor::from({1}, {acc});

    if (tracing(x)) {
        mark_output(y, {&x});
        Tensor xc = x, yc = y;
        std::vector<double> wc = w;
        g_graph->add_node([xc, yc, wc]() mutable {
            yc.ensure_grad();
            xc.ensure_grad();
            const double g = yc.grad()[0];
            for (size_t i = 0; i < wc.size(); ++i) xc.grad()[i] += g * wc[i];
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// selective SSM
// ---------------------------------------------------------------------------

void ssm_step_raw(double * state, const double * u, const double * B, const double * C,
                  const double * delta, const double * A, const double * D, double * y,
                  int d_inner, int d_state, int n_groups) {
    const int per_group = d_inner / n_groups;
    for (int c = 0; c < d_inner; ++c) {
        const int off = (c / per_group) * d_state;
        const double dec = std::exp(delta[c] * A[c]);
        const double drive = delta[c] * u[c];
        double * xr = state + (size_t) c * d_state;
        double acc = 0.0;
        for (int s = 0; s < d_state; ++s) {
            xr[s] = dec * xr[s] + drive * B[off + s];
            acc += C[off + s] * xr[s];
        }
        y[c] = acc + D[c] * u[c];
    }
}

Tensor ssm_scan(const Tensor & u, const Tensor & B, const Tensor & C, const Tensor & delta,
                const Tensor & A, const Tensor & D, int d_state, int n_groups) {
    check_2d(u, "ssm_scan");
    const int t_len = u.dim(0), di = u.dim(1);
    const int g_width = n_groups * d_state;
    if (di % n_groups != 0) fail(errc::invalid_argument, "ssm_scan: d_inner not divisible by n_groups");
    if (B.rows() != t_len || B.cols() != g_width || C.rows() != t_len || C.cols() != g_width) {
        fail(errc::invalid_argument, "ssm_scan: B/C shape mismatch, want [" + std::to_string(t_len) +
                                         "x" + std::to_string(g_width) + "]");
    }
    if (delta.shape() != u.shape()) fail(errc::invalid_argument, "ssm_scan: delta shape mismatch");
    if (A.numel() != (size_t) di || D.numel() != (size_t) di) {
        fail(errc::invalid_argument, "ssm_scan: A/D must have d_inner entries");
    }
    for (size_t i = 0; i < delta.numel(); ++i) {
        if (!(delta.at(i) > 0.0)) {
            fail(errc::invalid_argument, "ssm_scan: nonpositive step size in discretization");
        }
    }

    Tensor y = Tensor::zeros({t_len, di});
    // state trajectory kept for backward: states[t] = state after step t-1
    auto states = std::make_shared<std::vector<double>>((size_t) (t_len + 1) * di * d_state, 0.0);
    const size_t st_stride = (size_t) di * d_state;
    for (int t = 0; t < t_len; ++t) {
        double * cur = states->data() + (size_t) (t + 1) * st_stride;
        const double * prev = states->data() + (size_t) t * st_stride;
        for (size_t i = 0; i < st_stride; ++i) cur[i] = prev[i];
        ssm_step_raw(cur, u.data() + (size_t) t * di, B.data() + (size_t) t * g_width,
                     C.data() + (size_t) t * g_width, delta.data() + (size_t) t * di, A.data(),
                     D.data(), y.data() + (size_t) t * di, di, d_state, n_groups);
    }

    const bool want = g_graph && (u.requires_grad() || B.requires_grad() || C.requires_grad() ||
                                  delta.requires_grad() || A.requires_grad() || D.requires_grad());
    if (want) {
        Tensor yc = y;
        yc.set_requires_grad(true);
        for (const Tensor * t : {&u, &B, &C, &delta, &A, &D}) g_graph->note_input(t->id());
        Tensor uc = u, bc = B, cc = C, dl = delta, ac = A, dc = D;
        g_graph->add_node([uc, bc, cc, dl, ac, dc, yc, states, t_len, di, d_state, n_groups,
                           g_width, st_stride]() mutable {
            yc.ensure_grad();
            for (Tensor * t : {&uc, &bc, &cc, &dl, &ac, &dc}) {
                if (t->requires_grad()) t->ensure_grad();
            }
            const int per_group = di / n_groups;
            std::vector<double> lam(st_stride, 0.0); // adjoint of the running state
            for (int t = t_len - 1; t >= 0; --t) {
                const double * x_cur = states->data() + (size_t) (t + 1) * st_stride;
                const double * x_prev = states->data() + (size_t) t * st_stride;
                const double * dy = yc.grad() + (size_t) t * di;
                for (int c = 0; c < di; ++c) {
                    const int off = (c / per_group) * d_state;
                    const double dlt = dl.at((size_t) t * di + c);
                    const double a = ac.at((size_t) c);
                    const double uv = uc.at((size_t) t * di + c);
                    const double dec = std::exp(dlt * a);
                    const double drive = dlt * uv;
                    double * lr = lam.data() + (size_t) c * d_state;
                    // readout y[t,c] = sum_s C*x + D*u
                    if (dc.requires_grad()) dc.grad()[c] += dy[c] * uv;
                    if (uc.requires_grad()) uc.grad()[(size_t) t * di + c] += dy[c] * dc.at((size_t) c);
                    double sum_lx = 0.0, sum_lb = 0.0;
                    for (int s = 0; s < d_state; ++s) {
                        if (cc.requires_grad()) {
                            cc.grad()[(size_t) t * g_width + off + s] += dy[c] * x_cur[(size_t) c * d_state + s];
                        }
                        lr[s] += dy[c] * cc.at((size_t) t * g_width + off + s);
                        sum_lx += lr[s] * x_prev[(size_t) c * d_state + s];
                        sum_lb += lr[s] * bc.at((size_t) t * g_width + off + s);
                        if (bc.requires_grad()) {
                            bc.grad()[(size_t) t * g_width + off + s] += lr[s] * drive;
                        }
                    }
                    if (dl.requires_grad()) {
                        dl.grad()[(size_t) t * di + c] += sum_lx * a * dec + sum_lb * uv;
                    }
                    if (ac.requires_grad()) ac.grad()[c] += sum_lx * dlt * dec;
                    if (uc.requires_grad()) uc.grad()[(size_t) t * di + c] += sum_lb * dlt;
                    for (int s = 0; s < d_state; ++s) lr[s] *= dec;
                }
            }
        });
        return yc;
    }
    return y;
}

void grad_of(Graph & g, Tensor & loss, const std::vector<Tensor> & params) {
    if (loss.numel() != 1) {
        fail(errc::invalid_argument, "grad_of: loss must be scalar, got " + loss.shape_str());
    }
    for (const Tensor & p : params) {
        if (!g.uses(p.id())) {
            fail(errc::invalid_argument, "grad_of: parameter (id " + std::to_string(p.id()) +
                                             ", shape " + p.shape_str() + ") not connected to the loss");
        }
    }
    loss.ensure_grad();
    loss.grad()[0] = 1.0;
    g.backward();
}

} // namespace exitlm

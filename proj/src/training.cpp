#include "training.hpp"

#include <algorithm>
#include <cmath>

namespace exitlm {

void Adam::step(std::vector<Tensor> & params) {
    t_ += 1;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (Tensor & p : params) {
        if (!p.has_grad()) fail(errc::training, "adam: parameter without gradient");
        auto & mo = mv_[p.id()];
        if (mo.m.empty()) {
            mo.m.assign(p.numel(), 0.0);
            mo.v.assign(p.numel(), 0.0);
        }
        double * w = p.data();
        const double * g = p.grad();
        for (size_t i = 0; i < p.numel(); ++i) {
            mo.m[i] = b1_ * mo.m[i] + (1.0 - b1_) * g[i];
            mo.v[i] = b2_ * mo.v[i] + (1.0 - b2_) * g[i] * g[i];
            w[i] -= lr_ * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + eps_);
        }
    }
}

std::vector<double> decay_weights(int n_placements) {
    if (n_placements < 1) fail(errc::invalid_argument, "decay weights: need at least one placement");
    std::vector<double> w((size_t) n_placements);
    double sum = 0.0;
    for (int i = 0; i < n_placements; ++i) {
        w[(size_t) i] = (double) (n_placements - i);
        sum += w[(size_t) i];
    }
    for (double & x : w) x /= sum;
    return w;
}

int argmax_id(const double * v, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

std::vector<int> top_k_ids(const double * logits, int n, int k) {
    if (k < 1 || k > n) fail(errc::invalid_argument, "top-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    std::vector<int> idx((size_t) n);
    for (int i = 0; i < n; ++i) idx[(size_t) i] = i;
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [logits](int a, int b) {
        if (logits[a] != logits[b]) return logits[a] > logits[b];
        return a < b;
    });
    idx.resize((size_t) k);
    return idx;
}

namespace {

ExitLabelBatch labels_from_capture(const ModelParams & m, const ForwardCapture & cap,
                                   const Tensor & final_logits, const std::vector<int> & placements,
                                   int k) {
    const int t_len = final_logits.rows(), vocab = final_logits.cols();
    ExitLabelBatch out;
    out.weights = decay_weights((int) placements.size());

    // top-k membership mask per position, from the full model's logits
    std::vector<char> in_topk((size_t) t_len * vocab, 0);
    for (int t = 0; t < t_len; ++t) {
        for (int id : top_k_ids(final_logits.data() + (size_t) t * vocab, vocab, k)) {
            in_topk[(size_t) t * vocab + id] = 1;
        }
    }

    for (int p : placements) {
        Tensor hn = rms_norm(cap.block_out[(size_t) p], m.final_norm_gain);
        Tensor lg = matmul(hn, m.head);
        std::vector<int> lab((size_t) t_len);
        for (int t = 0; t < t_len; ++t) {
            const int am = argmax_id(lg.data() + (size_t) t * vocab, vocab);
            lab[(size_t) t] = in_topk[(size_t) t * vocab + am] ? 1 : 0;
        }
        out.labels.push_back(std::move(lab));
    }
    return out;
}

struct window_batch {
    std::vector<int> inputs;   // BOS + bytes
    std::vector<int> targets;  // next bytes
};

window_batch sample_window(const std::vector<int> & stream, int window, rng & r) {
    const int need = window;  // `window` targets need `window` stream tokens
    if ((int) stream.size() < need) {
        fail(errc::invalid_argument, "stream of " + std::to_string(stream.size()) +
                                         " tokens is shorter than one window of " + std::to_string(need));
    }
    const int o = (int) r.below((uint64_t) ((int) stream.size() - need + 1));
    window_batch wb;
    wb.inputs.push_back(256);
    for (int i = 0; i < window - 1; ++i) wb.inputs.push_back(stream[(size_t) (o + i)]);
    for (int i = 0; i < window; ++i) wb.targets.push_back(stream[(size_t) (o + i)]);
    return wb;
}

void check_finite_loss(double loss, int step) {
    if (!std::isfinite(loss)) {
        fail(errc::training, "loss diverged (non-finite) at step " + std::to_string(step));
    }
}

} // namespace

ExitLabelBatch oracle_labels(const ModelParams & m, const std::vector<int> & ids,
                             const std::vector<int> & placements, int k) {
    if (k < 1 || k > m.cfg.vocab_size) {
        fail(errc::invalid_argument, "oracle: k outside [1, vocab]");
    }
    ForwardCapture cap;
    Tensor logits = model_forward(m, ids, &cap);
    return labels_from_capture(m, cap, logits, placements, k);
}

TrainReport train_backbone(const ModelParams & m, const std::vector<int> & stream,
                           const TrainConfig & tc) {
    if (tc.window < 2) fail(errc::invalid_argument, "window must be >= 2");
    std::vector<Tensor> params = trainable_params(m);
    Adam opt(tc.lr);
    rng r(tc.seed);
    TrainReport rep;

    for (int step = 0; step < tc.steps; ++step) {
        Graph g;
        Tensor loss;
        {
            graph_scope scope(g);
            for (int b = 0; b < tc.batch; ++b) {
                window_batch wb = sample_window(stream, tc.window, r);
                Tensor logits = model_forward(m, wb.inputs);
                Tensor ce = cross_entropy_logits(logits, wb.targets);
                loss = b == 0 ? ce : add(loss, ce);
            }
            if (tc.batch > 1) loss = scale(loss, 1.0 / tc.batch);
        }
        check_finite_loss(loss.at(0), step);
        grad_of(g, loss, params);
        opt.step(params);
        for (Tensor & p : params) p.zero_grad();
        rep.loss.push_back(loss.at(0));
    }
    return rep;
}

TrainReport train_classifiers(const ModelParams & m, const ExitBank & bank,
                              const std::vector<int> & stream, const TrainConfig & tc) {
    if (tc.window < 2) fail(errc::invalid_argument, "window must be >= 2");
    std::vector<Tensor> params = trainable_params(bank);
    Adam opt(tc.lr);
    rng r(tc.seed);
    TrainReport rep;
    const std::vector<double> weights = decay_weights((int) bank.placements.size());

    for (int step = 0; step < tc.steps; ++step) {
        // frozen teacher pass, no graph: hidden states are constants below
        window_batch wb = sample_window(stream, tc.window, r);
        ForwardCapture cap;
        Tensor final_logits = model_forward(m, wb.inputs, &cap);
        ExitLabelBatch batch = labels_from_capture(m, cap, final_logits, bank.placements, tc.k);
        std::vector<Tensor> inputs;
        for (int p : bank.placements) {
            inputs.push_back(rms_norm(cap.block_out[(size_t) p], m.final_norm_gain));
        }

        Graph g;
        Tensor loss;
        {
            graph_scope scope(g);
            for (size_t i = 0; i < bank.classifiers.size(); ++i) {
                Tensor lg = classifier_logits_scan(bank.classifiers[i], inputs[i]);
                Tensor ce = scale(cross_entropy_logits(lg, batch.labels[i]), weights[i]);
                loss = i == 0 ? ce : add(loss, ce);
            }
        }
        check_finite_loss(loss.at(0), step);
        grad_of(g, loss, params);
        opt.step(params);
        for (Tensor & p : params) p.zero_grad();
        rep.loss.push_back(loss.at(0));
    }
    return rep;
}

} // namespace exitlm

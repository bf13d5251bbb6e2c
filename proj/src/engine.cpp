#include "engine.hpp"

#include "training.hpp"

#include <cmath>
#include <unordered_set>

namespace exitlm {

const char * run_mode_name(run_mode m) {
    switch (m) {
        case run_mode::full: return "full";
        case run_mode::exits: return "exits";
        case run_mode::pruned: return "pruned";
    }
    fail(errc::invalid_argument, "unknown run mode");
}

InferenceStream::InferenceStream(const ModelParams & m, const ExitBank * bank, run_mode mode,
                                 double theta, missing_state_policy policy, int prune_p)
    : m_(m), bank_(bank), mode_(mode), theta_(theta), policy_(policy), prune_p_(prune_p) {
    const ModelConfig & cfg = m_.cfg;
    if (mode_ == run_mode::exits) {
        if (!bank_) fail(errc::config, "exit mode requires a trained classifier bank");
        validate_placements(bank_->placements, cfg.n_blocks);
        if (bank_->placements.size() != bank_->classifiers.size()) {
            fail(errc::config, "classifier count does not match placement count");
        }
        if (theta_ < 0.0) fail(errc::invalid_argument, "threshold must be nonnegative");
        const bool tf_backbone = cfg.kind == backbone_kind::transformer;
        const bool tf_policy = policy_ == missing_state_policy::kv_copy ||
                               policy_ == missing_state_policy::kv_recompute;
        if (tf_backbone != tf_policy) {
            fail(errc::policy, std::string("policy ") + policy_name(policy_) +
                                   " does not apply to a " + backbone_name(cfg.kind) + " backbone");
        }
        cls_ = make_exit_stream_state(*bank_);
    } else if (mode_ == run_mode::pruned) {
        if (prune_p_ < 0 || prune_p_ > cfg.n_blocks - 2) {
            fail(errc::config, "prune depth " + std::to_string(prune_p_) + " outside [0, " +
                                   std::to_string(cfg.n_blocks - 2) + "]");
        }
    }
    if (cfg.kind == backbone_kind::transformer) {
        kv_ = make_kv_cache(cfg);
    } else {
        const MambaCellDims dims = backbone_cell_dims(cfg);
        for (int b = 0; b < cfg.n_blocks; ++b) ssm_.push_back(make_cell_state(dims));
    }
}

bool InferenceStream::block_disabled(int b) const {
    if (mode_ != run_mode::pruned || prune_p_ == 0) return false;
    const int n = m_.cfg.n_blocks;
    return b >= n - 1 - prune_p_ && b <= n - 2;
}

double InferenceStream::block_step_cost() const {
    const ModelConfig & cfg = m_.cfg;
    if (cfg.kind == backbone_kind::transformer) {
        // rows attended after this token's append, the fresh token included
        return cost_decode_step_transformer(pos_ + 1, cfg.d_model);
    }
    return cost_block_mamba(cfg.d_model, cfg.n_groups, cfg.d_state);
}

std::vector<double> InferenceStream::head_logits(const Tensor & h_row) {
    mac_scope ex(mac_channel::excluded);
    return matmul(rms_norm(h_row, m_.final_norm_gain), m_.head).vec();
}

std::vector<double> InferenceStream::prefill(const std::vector<int> & prompt) {
    const ModelConfig & cfg = m_.cfg;
    if (prefilled_) fail(errc::invalid_argument, "prefill called twice on one stream");
    if (prompt.empty()) fail(errc::invalid_argument, "empty prompt");
    prefilled_ = true;
    const int t_len = (int) prompt.size();

    if (cfg.kind == backbone_kind::transformer) {
        if (t_len > cfg.max_seq_len) {
            fail(errc::capacity, "prompt of " + std::to_string(t_len) +
                                     " tokens exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
        }
        Tensor h = embedding_rows(m_.embedding, prompt);
        std::vector<int> pos_ids((size_t) t_len);
        for (int i = 0; i < t_len; ++i) pos_ids[(size_t) i] = i;
        h = add(h, embedding_rows(m_.pos_embedding, pos_ids));
        const double block_cost = cost_block_transformer(t_len, cfg.d_model);
        {
            mac_scope bb(mac_channel::backbone);
            for (int b = 0; b < cfg.n_blocks; ++b) {
                if (block_disabled(b)) continue;
                h = tf_block_prefill(cfg, m_.t_blocks[(size_t) b], h, &kv_.blocks[(size_t) b]);
                led_.prefill_backbone += block_cost;
            }
        }
        led_.prefill_reference += cfg.n_blocks * block_cost;
        pos_ = t_len;
        const double * last = h.data() + (size_t) (t_len - 1) * cfg.d_model;
        Tensor row = Tensor::from({1, cfg.d_model}, std::vector<double>(last, last + cfg.d_model));
        return head_logits(row);
    }

    // mamba: recurrent absorption, numerically identical to the scan
    const double block_cost = cost_block_mamba(cfg.d_model, cfg.n_groups, cfg.d_state);
    std::vector<double> logits;
    for (int i = 0; i < t_len; ++i) {
        Tensor h = embedding_rows(m_.embedding, {prompt[(size_t) i]});
        {
            mac_scope bb(mac_channel::backbone);
            for (int b = 0; b < cfg.n_blocks; ++b) {
                if (block_disabled(b)) continue;
                h = mamba_block_step(m_.m_blocks[(size_t) b], h, ssm_[(size_t) b]);
                led_.prefill_backbone += block_cost;
            }
        }
        led_.prefill_reference += cfg.n_blocks * block_cost;
        pos_ += 1;
        if (i == t_len - 1) logits = head_logits(h);
    }
    return logits;
}

std::vector<double> InferenceStream::decode(int token_id) {
    const ModelConfig & cfg = m_.cfg;
    if (!prefilled_) fail(errc::invalid_argument, "decode before prefill");
    if (cfg.kind == backbone_kind::transformer && pos_ >= cfg.max_seq_len) {
        fail(errc::capacity,
             "context window exhausted at " + std::to_string(cfg.max_seq_len) + " tokens");
    }
    const int n = cfg.n_blocks;
    const double step = block_step_cost();

    Tensor h = embedding_rows(m_.embedding, {token_id});
    if (cfg.kind == backbone_kind::transformer) {
        h = add(h, embedding_rows(m_.pos_embedding, {pos_}));
    }

    int depth = mode_ == run_mode::pruned ? n - prune_p_ : n;
    size_t next_exit = 0;

    for (int b = 0; b < n - 1; ++b) {
        if (block_disabled(b)) continue;
        {
            mac_scope bb(mac_channel::backbone);
            h = cfg.kind == backbone_kind::transformer
                    ? tf_block_decode_step(cfg, m_.t_blocks[(size_t) b], h, kv_.blocks[(size_t) b])
                    : mamba_block_step(m_.m_blocks[(size_t) b], h, ssm_[(size_t) b]);
        }
        led_.backbone += step;

        if (mode_ != run_mode::exits || next_exit >= bank_->placements.size() ||
            bank_->placements[next_exit] != b) {
            continue;
        }
        const ExitClassifierParams & c = bank_->classifiers[next_exit];
        Tensor hn;
        {
            mac_scope ex(mac_channel::excluded);
            hn = rms_norm(h, m_.final_norm_gain);
        }
        MambaCellState * st =
            c.variant == exit_variant::mamba ? &cls_.cells[next_exit] : nullptr;
        const double conf = confidence(c, hn, st);
        led_.classifiers +=
            classifier_cost(c.variant, cfg.d_model, bank_->cfg.cls_n_groups, bank_->cfg.cls_d_state);
        next_exit += 1;
        if (!should_exit(theta_, conf)) continue;

        depth = b;
        std::vector<int> skipped;
        for (int j = b + 1; j <= n - 2; ++j) skipped.push_back(j);
        if (!skipped.empty()) {
            switch (policy_) {
                case missing_state_policy::kv_copy:
                    tf_kv_copy_forward(kv_, b, skipped);
                    break;
                case missing_state_policy::kv_recompute: {
                    mac_scope rc(mac_channel::recompute);
                    for (int j : skipped) {
                        tf_kv_partial_forward(cfg, m_.t_blocks[(size_t) j], h,
                                              kv_.blocks[(size_t) j]);
                        led_.recompute += transformer_partial_charge(cfg.d_model);
                    }
                    break;
                }
                case missing_state_policy::ssm_recompute: {
                    mac_scope rc(mac_channel::recompute);
                    for (int j : skipped) {
                        mamba_partial_forward(m_.m_blocks[(size_t) j], h, ssm_[(size_t) j]);
                        led_.recompute +=
                            mamba_partial_charge(cfg.d_model, cfg.n_groups, cfg.d_state);
                    }
                    break;
                }
                case missing_state_policy::ssm_skip:
                    for (int j : skipped) mamba_state_skip(ssm_[(size_t) j]);
                    break;
            }
        }
        break;
    }

    // the final block, norm and head run for every token, exit or not
    {
        mac_scope bb(mac_channel::backbone);
        h = cfg.kind == backbone_kind::transformer
                ? tf_block_decode_step(cfg, m_.t_blocks[(size_t) (n - 1)], h,
                                       kv_.blocks[(size_t) (n - 1)])
                : mamba_block_step(m_.m_blocks[(size_t) (n - 1)], h, ssm_[(size_t) (n - 1)]);
    }
    led_.backbone += step;
    led_.reference += n * step;
    led_.tokens += 1;
    pos_ += 1;
    last_depth_ = depth;
    return head_logits(h);
}

void repetition_penalty(std::vector<double> & logits, const std::vector<int> & history,
                        double factor) {
    if (factor < 1.0) fail(errc::invalid_argument, "penalty factor must be >= 1");
    std::unordered_set<int> seen(history.begin(), history.end());
    for (int id : seen) {
        if (id < 0 || id >= (int) logits.size()) {
            fail(errc::invalid_argument, "history id " + std::to_string(id) + " outside the vocab");
        }
        double & v = logits[(size_t) id];
        v = v > 0.0 ? v / factor : v * factor;
    }
}

bool degenerate_check(const std::vector<int> & ids, int run_length) {
    if (run_length < 1) fail(errc::invalid_argument, "run length must be >= 1");
    int run = 0, prev = -1;
    for (int id : ids) {
        run = id == prev ? run + 1 : 1;
        prev = id;
        if (run >= run_length) return true;
    }
    return false;
}

GenerationResult generate(const ModelParams & m, const ExitBank * bank,
                          const GenerationRequest & req) {
    if (req.max_new < 1) fail(errc::invalid_argument, "max_new must be >= 1");
    if (req.rep_penalty < 1.0) fail(errc::invalid_argument, "penalty factor must be >= 1");
    if (m.cfg.kind == backbone_kind::transformer &&
        (int) req.prompt.size() + req.max_new > m.cfg.max_seq_len) {
        fail(errc::capacity, "prompt plus max_new spans " +
                                 std::to_string(req.prompt.size() + (size_t) req.max_new) +
                                 " tokens, over max_seq_len " + std::to_string(m.cfg.max_seq_len));
    }
    InferenceStream s(m, bank, req.mode, req.theta, req.policy, req.prune_p);
    const bool penalize =
        req.rep == rep_mode::on ||
        (req.rep == rep_mode::auto_skip && req.mode == run_mode::exits &&
         req.policy == missing_state_policy::ssm_skip);

    GenerationResult out;
    std::vector<double> logits = s.prefill(req.prompt);
    for (int i = 0; i < req.max_new; ++i) {
        if (penalize) repetition_penalty(logits, out.ids, req.rep_penalty);
        const int next = argmax_id(logits.data(), (int) logits.size());
        out.ids.push_back(next);
        logits = s.decode(next);
        out.exit_depths.push_back(s.last_depth());
    }
    out.ledger = s.ledger();
    out.degenerate = degenerate_check(out.ids, req.degen_run);
    return out;
}

namespace {

double cross_entropy_row(const std::vector<double> & logits, int target) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    return mx + std::log(sum) - logits[(size_t) target];
}

} // namespace

EvalResult evaluate_teacher_forced(const ModelParams & m, const ExitBank * bank,
                                   const std::vector<std::vector<int>> & windows,
                                   const EvalRequest & req) {
    if (windows.empty()) fail(errc::invalid_argument, "no evaluation windows");
    EvalResult out;
    double ce_sum = 0.0, depth_sum = 0.0;
    int correct = 0;
    for (const std::vector<int> & w : windows) {
        if (w.size() < 2) fail(errc::invalid_argument, "evaluation window shorter than 2 tokens");
        InferenceStream s(m, bank, req.mode, req.theta, req.policy, req.prune_p);
        std::vector<double> logits = s.prefill({w[0]});
        for (size_t i = 1; i < w.size(); ++i) {
            const int target = w[i];
            if (target < 0 || target >= m.cfg.vocab_size) {
                fail(errc::invalid_argument, "window token outside the vocab");
            }
            if (argmax_id(logits.data(), (int) logits.size()) == target) correct += 1;
            ce_sum += cross_entropy_row(logits, target);
            out.positions += 1;
            if (i + 1 < w.size()) {
                logits = s.decode(target);
                depth_sum += s.last_depth();
                out.decoded_tokens += 1;
            }
        }
        out.ledger.merge(s.ledger());
    }
    out.accuracy = (double) correct / out.positions;
    out.perplexity = std::exp(ce_sum / out.positions);
    out.mean_exit_depth =
        out.decoded_tokens > 0
            ? depth_sum / out.decoded_tokens
            : (double) (m.cfg.n_blocks - (req.mode == run_mode::pruned ? req.prune_p : 0));
    return out;
}

} // namespace exitlm

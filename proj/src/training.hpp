#pragma once

#include "exits.hpp"

#include <unordered_map>

namespace exitlm {

// Adam with bias correction. Moment buffers are keyed by tensor identity, so
// one optimizer instance follows a fixed parameter set across steps.
class Adam {
  public:
    explicit Adam(double lr = 3e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(std::vector<Tensor> & params);
    double lr() const { return lr_; }

  private:
    struct moments {
        std::vector<double> m, v;
    };
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    std::unordered_map<uint64_t, moments> mv_;
};

// Loss weights across placements, shallowest first: (P, P-1, ..., 1)/sum.
std::vector<double> decay_weights(int n_placements);

// Exit/continue labels for one teacher-forced window. labels[i][t] is 1 when
// the argmax after placement i lies in the oracle's top-k at position t.
struct ExitLabelBatch {
    std::vector<std::vector<int>> labels;  // per placement, per position
    std::vector<double> weights;           // per placement
};

// Top-k token ids by logit, ties broken toward the lower id.
std::vector<int> top_k_ids(const double * logits, int n, int k);
int argmax_id(const double * v, int n);

ExitLabelBatch oracle_labels(const ModelParams & m, const std::vector<int> & ids,
                             const std::vector<int> & placements, int k);

struct TrainReport {
    std::vector<double> loss;  // one entry per step
};

// Next-token training of the backbone on a raw byte stream (no BOS inside;
// each sampled window gets BOS prepended). Mutates the model in place.
TrainReport train_backbone(const ModelParams & m, const std::vector<int> & stream,
                           const TrainConfig & tc);

// Joint KD training of all classifiers against the frozen backbone.
TrainReport train_classifiers(const ModelParams & m, const ExitBank & bank,
                              const std::vector<int> & stream, const TrainConfig & tc);

} // namespace exitlm

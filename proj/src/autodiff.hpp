#pragma once

#include "tensor.hpp"

#include <functional>
#include <unordered_set>
#include <vector>

namespace exitlm {

// Define-by-run reverse-mode autodiff. A Graph is rebuilt for every training
// step; when no graph is active the same op functions run as a graph-free
// fast path, which is what inference uses. Recording order is the topological
// order, so backward() is a single reverse sweep.
class Graph {
  public:
    void add_node(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }
    void note_input(uint64_t id) { used_.insert(id); }
    bool uses(uint64_t id) const { return used_.count(id) != 0; }
    size_t size() const { return nodes_.size(); }

    // reverse sweep, each node visited exactly once
    void backward() {
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

  private:
    std::vector<std::function<void()>> nodes_;
    std::unordered_set<uint64_t>       used_;
};

Graph * active_graph();

class graph_scope {
  public:
    explicit graph_scope(Graph & g);
    ~graph_scope();
    graph_scope(const graph_scope &) = delete;
    graph_scope & operator=(const graph_scope &) = delete;

  private:
    Graph * prev_;
};

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor & a, const Tensor & b);    // [m,k]x[k,n] -> [m,n]
Tensor matmul_nt(const Tensor & a, const Tensor & b); // [m,k]x[n,k]^T -> [m,n]

Tensor add(const Tensor & a, const Tensor & b); // same shape
Tensor mul(const Tensor & a, const Tensor & b); // elementwise
Tensor scale(const Tensor & x, double c);
Tensor exp_t(const Tensor & x);
Tensor neg(const Tensor & x);
Tensor silu(const Tensor & x);
Tensor softplus(const Tensor & x);

Tensor softmax_rows(const Tensor & x);
// -inf above the diagonal of a [T,T] score matrix
Tensor causal_mask(const Tensor & x);

Tensor rms_norm(const Tensor & x, const Tensor & gain); // rows of width |gain|

Tensor slice_cols(const Tensor & x, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor> & parts);

// broadcast over rows: y[i,j] = x[i,j]*w[j]  /  y[i,j] = x[i,j]+b[j]
Tensor scale_channels(const Tensor & x, const Tensor & w);
Tensor add_channels(const Tensor & x, const Tensor & b);

// rows of E gathered by token id
Tensor embedding_rows(const Tensor & table, const std::vector<int> & ids);

// depthwise causal conv: y[t,c] = sum_j w[c,j] * x[t-K+1+j, c], zero padded
Tensor conv1d_causal(const Tensor & x, const Tensor & w);

// mean over rows of (logsumexp(row) - row[label])
Tensor cross_entropy_logits(const Tensor & logits, const std::vector<int> & labels);

// scalar = sum_i x[i]*w[i] with fixed (non-trainable) weights
Tensor weighted_sum(const Tensor & x, const std::vector<double> & w);

// ---- selective SSM --------------------------------------------------------

// One recurrence update, shared verbatim by the training scan and the
// inference step so the two forms agree bit for bit.
//   state[c,s] = exp(delta[c]*A[c]) * state[c,s] + delta[c]*u[c] * B[g(c),s]
//   y[c]       = sum_s C[g(c),s] * state[c,s] + D[c]*u[c]
void ssm_step_raw(double * state, const double * u, const double * B, const double * C,
                  const double * delta, const double * A, const double * D, double * y,
                  int d_inner, int d_state, int n_groups);

// Parallel (scan) form over T steps from a zero state, differentiable through
// every input. delta must be positive elementwise.
Tensor ssm_scan(const Tensor & u, const Tensor & B, const Tensor & C, const Tensor & delta,
                const Tensor & A, const Tensor & D, int d_state, int n_groups);

// ---- gradients ------------------------------------------------------------

// Backpropagate from a scalar loss; gradients accumulate into each tensor's
// grad buffer. Every tensor in `params` must have been consumed by a recorded
// op, otherwise a connectivity error is raised.
void grad_of(Graph & g, Tensor & loss, const std::vector<Tensor> & params);

} // namespace exitlm

#pragma once

#include "common.hpp"

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

namespace exitlm {

// Dense row-major tensor of doubles. Copies are shallow: they share one body,
// so a gradient written through one handle is visible through all of them.
// Everything runs in fp64; desk-scale sizes make that cheap and keep the
// finite-difference checks tight.
struct tensor_body {
    std::vector<int>    shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until ensure_grad()
    uint64_t            id = 0;
    bool                requires_grad = false;
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor from(std::vector<int> shape, std::vector<double> values);
    static Tensor randn(std::vector<int> shape, rng & r, double stddev);

    bool defined() const { return b_ != nullptr; }

    const std::vector<int> & shape() const { return b_->shape; }
    int dim(int i) const { return b_->shape[(size_t) i]; }
    int ndim() const { return (int) b_->shape.size(); }
    size_t numel() const { return b_->data.size(); }

    // 2D helpers (most of the kernel is matrices)
    int rows() const { return ndim() == 1 ? 1 : dim(0); }
    int cols() const { return ndim() == 1 ? dim(0) : dim(ndim() - 1); }

    double * data() { return b_->data.data(); }
    const double * data() const { return b_->data.data(); }
    double & at(size_t i) { return b_->data[i]; }
    double at(size_t i) const { return b_->data[i]; }
    double & at2(int i, int j) { return b_->data[(size_t) i * cols() + j]; }
    double at2(int i, int j) const { return b_->data[(size_t) i * cols() + j]; }

    uint64_t id() const { return b_->id; }

    bool requires_grad() const { return b_ && b_->requires_grad; }
    Tensor & set_requires_grad(bool v) {
        b_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return b_ && !b_->grad.empty(); }
    void ensure_grad() {
        if (b_->grad.empty()) b_->grad.assign(b_->data.size(), 0.0);
    }
    void zero_grad() {
        if (!b_->grad.empty()) b_->grad.assign(b_->data.size(), 0.0);
    }
    double * grad() { return b_->grad.data(); }
    const double * grad() const { return b_->grad.data(); }
    std::vector<double> & grad_vec() { return b_->grad; }

    std::vector<double> & vec() { return b_->data; }
    const std::vector<double> & vec() const { return b_->data; }

    std::string shape_str() const;
    bool all_finite() const;

  private:
    std::shared_ptr<tensor_body> b_;
};

size_t shape_numel(const std::vector<int> & shape);

// ---------------------------------------------------------------------------
// Instrumented multiply-accumulate counter.
//
// Every dense matmul reports m*k*n MACs to the channel currently selected on
// this thread. The inference engine scopes block math, classifier math and
// state recomputation into separate channels; everything the cost model
// deliberately ignores (embedding/head, norms, training backward passes) lands
// in `excluded`. The ledger tests compare the analytic charges against these
// raw counts.
// ---------------------------------------------------------------------------

enum class mac_channel { excluded = 0, backbone = 1, classifier = 2, recompute = 3 };

struct mac_counts {
    uint64_t backbone = 0;
    uint64_t classifier = 0;
    uint64_t recompute = 0;
    uint64_t excluded = 0;
};

mac_counts & mac_counter();
void mac_counter_reset();
void mac_add(uint64_t macs);

mac_channel mac_current_channel();

class mac_scope {
  public:
    explicit mac_scope(mac_channel ch);
    ~mac_scope();
    mac_scope(const mac_scope &) = delete;
    mac_scope & operator=(const mac_scope &) = delete;

  private:
    mac_channel prev_;
};

// ---------------------------------------------------------------------------
// Raw kernels (no autodiff). These are the single source of truth for the
// arithmetic; the autodiff layer and the inference fast path both call them,
// which keeps prefill/decode and scan/step dualities bit-exact.
// ---------------------------------------------------------------------------

// c[m x n] = a[m x k] * b[k x n]; counted
void matmul_raw(const double * a, const double * b, double * c, int m, int k, int n);
// c[m x n] = a[m x k] * b[n x k]^T; counted
void matmul_nt_raw(const double * a, const double * b, double * c, int m, int k, int n);
// c[k x n] = a[m x k]^T * b[m x n]; counted
void matmul_tn_raw(const double * a, const double * b, double * c, int m, int k, int n);

// in-place row softmax with max subtraction; -inf entries become exact zeros
void softmax_row_raw(double * x, int n);

// y = x / sqrt(mean(x^2) + eps) * gain, one row of length d
void rms_norm_row_raw(const double * x, const double * gain, double * y, int d, double eps);

double silu_raw(double x);
double sigmoid_raw(double x);
double softplus_raw(double x);

constexpr double k_norm_eps = 1e-6;

} // namespace exitlm

#include "tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace exitlm {

const char * errc_name(errc c) {
    switch (c) {
        case errc::invalid_argument: return "invalid_argument";
        case errc::capacity:         return "capacity";
        case errc::policy:           return "policy";
        case errc::config:           return "config";
        case errc::training:         return "training";
        case errc::checkpoint:       return "checkpoint";
        case errc::io:               return "io";
    }
    return "unknown";
}

double rng::normal() {
    // Box-Muller; u1 in (0,1] to keep log finite
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

size_t shape_numel(const std::vector<int> & shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) fail(errc::invalid_argument, "tensor shape has non-positive dimension");
        n *= (size_t) d;
    }
    return n;
}

static std::atomic<uint64_t> g_next_tensor_id{1};

static std::shared_ptr<tensor_body> make_body(std::vector<int> shape) {
    auto b = std::make_shared<tensor_body>();
    b->data.assign(shape_numel(shape), 0.0);
    b->shape = std::move(shape);
    b->id = g_next_tensor_id.fetch_add(1, std::memory_order_relaxed);
    return b;
}

Tensor Tensor::zeros(std::vector<int> shape) {
    Tensor t;
    t.b_ = make_body(std::move(shape));
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t = zeros(std::move(shape));
    for (auto & x : t.b_->data) x = v;
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
    Tensor t;
    t.b_ = make_body(std::move(shape));
    if (values.size() != t.b_->data.size()) {
        fail(errc::invalid_argument, "tensor init: " + std::to_string(values.size()) +
                                         " values for shape " + t.shape_str());
    }
    t.b_->data = std::move(values);
    return t;
}

Tensor Tensor::randn(std::vector<int> shape, rng & r, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (auto & x : t.b_->data) x = r.normal() * stddev;
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < b_->shape.size(); ++i) {
        if (i) os << "x";
        os << b_->shape[i];
    }
    os << "]";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double v : b_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// --------------------------------------------------------------------------
// MAC counter
// --------------------------------------------------------------------------

namespace {
thread_local mac_counts  g_counts;
thread_local mac_channel g_channel = mac_channel::excluded;
} // namespace

mac_counts & mac_counter() { return g_counts; }

void mac_counter_reset() { g_counts = mac_counts{}; }

mac_channel mac_current_channel() { return g_channel; }

void mac_add(uint64_t macs) {
    switch (g_channel) {
        case mac_channel::backbone:   g_counts.backbone += macs; break;
        case mac_channel::classifier: g_counts.classifier += macs; break;
        case mac_channel::recompute:  g_counts.recompute += macs; break;
        case mac_channel::excluded:   g_counts.excluded += macs; break;
    }
}

mac_scope::mac_scope(mac_channel ch) : prev_(g_channel) { g_channel = ch; }
mac_scope::~mac_scope() { g_channel = prev_; }

// --------------------------------------------------------------------------
// Raw kernels
// --------------------------------------------------------------------------

void matmul_raw(const double * a, const double * b, double * c, int m, int k, int n) {
    mac_add((uint64_t) m * k * n);
    for (int i = 0; i < m; ++i) {
        double * ci = c + (size_t) i * n;
        for (int j = 0; j < n; ++j) ci[j] = 0.0;
        const double * ai = a + (size_t) i * k;
        for (int p = 0; p < k; ++p) {
            const double  av = ai[p];
            const double * bp = b + (size_t) p * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_nt_raw(const double * a, const double * b, double * c, int m, int k, int n) {
    mac_add((uint64_t) m * k * n);
    for (int i = 0; i < m; ++i) {
        const double * ai = a + (size_t) i * k;
        double * ci = c + (size_t) i * n;
        for (int j = 0; j < n; ++j) {
            const double * bj = b + (size_t) j * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
}

void matmul_tn_raw(const double * a, const double * b, double * c, int m, int k, int n) {
    mac_add((uint64_t) m * k * n);
    for (size_t i = 0; i < (size_t) k * n; ++i) c[i] = 0.0;
    for (int p = 0; p < m; ++p) {
        const double * ap = a + (size_t) p * k;
        const double * bp = b + (size_t) p * n;
        for (int i = 0; i < k; ++i) {
            const double av = ap[i];
            double * ci = c + (size_t) i * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void softmax_row_raw(double * x, int n) {
    double mx = -HUGE_VAL;
    for (int i = 0; i < n; ++i) {
        if (x[i] > mx) mx = x[i];
    }
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        // exp(-inf - mx) underflows to an exact 0, so masked entries drop out
        x[i] = std::exp(x[i] - mx);
        sum += x[i];
    }
    const double inv = 1.0 / sum;
    for (int i = 0; i < n; ++i) x[i] *= inv;
}

void rms_norm_row_raw(const double * x, const double * gain, double * y, int d, double eps) {
    double ss = 0.0;
    for (int i = 0; i < d; ++i) ss += x[i] * x[i];
    const double inv = 1.0 / std::sqrt(ss / d + eps);
    for (int i = 0; i < d; ++i) y[i] = x[i] * inv * gain[i];
}

double sigmoid_raw(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double silu_raw(double x) { return x * sigmoid_raw(x); }

double softplus_raw(double x) {
    // max(x,0) + log1p(exp(-|x|)) is overflow-safe
    return (x > 0 ? x : 0.0) + std::log1p(std::exp(-(x > 0 ? x : -x)));
}

} // namespace exitlm

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace exitlm {

// Error categories, mirrored by the C API status codes and the CLI exit codes.
enum class errc {
    invalid_argument,  // bad shapes, out-of-range labels, unconnected params
    capacity,          // cache or context length exceeded
    policy,            // missing-state bookkeeping violated (internal bug)
    config,            // inconsistent run configuration
    training,          // divergence (NaN loss)
    checkpoint,        // manifest/shape/version mismatch
    io,                // file system / corpus ingestion
};

class error : public std::runtime_error {
  public:
    error(errc c, const std::string & msg) : std::runtime_error(msg), code_(c) {}
    errc code() const noexcept { return code_; }

  private:
    errc code_;
};

[[noreturn]] inline void fail(errc c, const std::string & msg) {
    throw error(c, msg);
}

const char * errc_name(errc c);

// Deterministic RNG. std::mt19937_64 has a fully specified sequence; the
// distributions below are hand-rolled because the std ones are not portable.
class rng {
  public:
    explicit rng(uint64_t seed) : s_(seed) {}

    uint64_t next_u64() {
        // splitmix64, fully specified
        uint64_t z = (s_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per call (cached pair dropped for simplicity)
    double normal();

    uint64_t below(uint64_t n) { return next_u64() % n; }

  private:
    uint64_t s_;
};

} // namespace exitlm

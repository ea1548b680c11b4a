#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace megcast {

using Eigen::MatrixXd;
using Eigen::MatrixXf;
using Eigen::MatrixXi;
using Eigen::VectorXd;
using Eigen::VectorXi;

// Error categories map to distinct CLI exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic RNG. std::mt19937_64 output is pinned by the standard, and all
// derived draws below use explicit arithmetic, so streams are identical across
// compilers and platforms.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    // [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Unbiased-enough integer in [0, n); Lemire multiply-shift.
    int64_t randint(int64_t n) {
        return static_cast<int64_t>((static_cast<__uint128_t>(gen_()) * static_cast<uint64_t>(n)) >> 64);
    }

    int64_t randint(int64_t lo, int64_t hi_inclusive) { return lo + randint(hi_inclusive - lo + 1); }

    // Standard normal, Box-Muller with cached spare.
    double gauss() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[static_cast<size_t>(randint(static_cast<int64_t>(i)))]);
        }
    }

    // Derive an independent stream, e.g. one per channel.
    static uint64_t substream(uint64_t seed, uint64_t index) {
        return (seed * 0x9E3779B97F4A7C15ull) ^ (index + 0x632BE59BD9B4E019ull);
    }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Shortest decimal form that round-trips a double. Used by every text format
// so reruns are byte-identical.
std::string format_double(double v);

std::string format_int(int64_t v);

}  // namespace megcast

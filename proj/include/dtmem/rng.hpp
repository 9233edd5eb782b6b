#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "dtmem/common.hpp"

namespace dtmem {

// Deterministic random source. mt19937_64 output is pinned by the standard,
// but the std distributions are not, so every distribution here is derived
// from raw engine output with explicit arithmetic. Identical seeds therefore
// give bit-identical streams on any conforming platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw ContractError("uniform_int: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    // Standard normal via Box-Muller. The spare draw is discarded so each
    // call consumes a fixed amount of engine state.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Normal(0, std) truncated to +/- 2 std by rejection.
    double truncated_normal(double std_dev) {
        double z = normal();
        while (std::abs(z) > 2.0) z = normal();
        return z * std_dev;
    }

    std::string save_state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void restore_state(const std::string& state) {
        std::istringstream is(state);
        is >> engine_;
        if (is.fail()) throw FormatError("rng: unreadable engine state");
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace dtmem

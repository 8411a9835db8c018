// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace sbrlab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operand shapes do not conform (matmul inner dims, broadcast rules, ...).
struct ShapeError : Error {
    using Error::Error;
};

// NaN/Inf fed into the graph.
struct NonFiniteError : Error {
    using Error::Error;
};

// Bad hyperparameter / config value.
struct ConfigError : Error {
    using Error::Error;
};

// File I/O, checkpoint corruption, CSV parse failures.
struct IoError : Error {
    using Error::Error;
};

// Deterministic RNG. All sampling goes through this class so that a seed
// fully pins every random draw; std::<distribution> types are avoided
// because their output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed), seed_mix_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

    template <typename Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

    // Derive an independent stream, e.g. one per epoch or per component.
    Rng fork(std::uint64_t stream) const {
        return Rng(seed_mix_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

private:
    std::mt19937_64 gen_;
    std::uint64_t seed_mix_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace sbrlab

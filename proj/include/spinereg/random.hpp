#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "spinereg/transform.hpp"

namespace spinereg {

/// Seeded generator with a fully specified output sequence.
///
/// Raw bits come from std::mt19937_64 (its sequence is fixed by the C++
/// standard). Conversions are done here rather than with <random>
/// distributions, whose algorithms are implementation-defined:
///   uniform()  = (bits >> 11) * 2^-53
///   normal()   = Box-Muller, sqrt(-2 ln(1 - u1)) * cos(2 pi u2), one draw per call
///   unit_vector() = (sqrt(1 - z^2) cos phi, sqrt(1 - z^2) sin phi, z),
///                   z = uniform(-1, 1), phi = uniform(0, 2 pi)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

    double normal() {
        const double u1 = uniform(), u2 = uniform();
        return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    Vec3 unit_vector() {
        const double z = uniform(-1.0, 1.0);
        const double phi = uniform(0.0, 2.0 * std::numbers::pi);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        return {r * std::cos(phi), r * std::sin(phi), z};
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace spinereg

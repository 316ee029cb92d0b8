#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "dflab/common.hpp"

namespace dflab {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d649bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic random stream. Distinct (seed, stream) pairs give
/// independent sequences, so simulations can run in parallel without
/// sharing state.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : engine_(splitmix64(splitmix64(seed) ^ splitmix64(stream ^ 0xa02bdbf7bb3c0a7ULL))) {}

    /// Uniform on [0, 1).
    double uniform() {
        // 53 random mantissa bits; avoids distribution-object state.
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t integer(std::uint64_t n) { return engine_() % n; }

    /// Standard normal via the Marsaglia polar method (no cached spare,
    /// to keep the draw sequence position-independent).
    double normal() {
        for (;;) {
            const double u = 2.0 * uniform() - 1.0;
            const double v = 2.0 * uniform() - 1.0;
            const double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }

    /// Gamma(shape, 1) via Marsaglia-Tsang; shape boost below 1.
    double gamma(double shape) {
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double chi_squared(double df) { return 2.0 * gamma(0.5 * df); }

    /// Student t with df degrees of freedom (unit scale, variance df/(df-2)).
    double student_t(double df) {
        const double z = normal();
        const double v = chi_squared(df);
        return z / std::sqrt(v / df);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Raw moments E|T|^r of a standard Student t; finite for r < df.
inline double abs_t_moment(double df, int r) {
    return std::pow(df, 0.5 * r) * std::exp(std::lgamma(0.5 * (r + 1)) + std::lgamma(0.5 * (df - r)) -
                                            std::lgamma(0.5 * df)) /
           std::sqrt(M_PI);
}

/// Two-piece (split-scale) skewed t of Fernandez & Steel. xi > 1 skews
/// right, xi < 1 left; the negative side is stretched by 1/xi.
struct TwoPieceT {
    double df;
    double xi;
    double mean;   // analytic mean of the unstandardized draw
    double sd;     // analytic sd of the unstandardized draw

    TwoPieceT(double df_, double xi_) : df(df_), xi(xi_) {
        if (df <= 2.0) throw ConfigError("two-piece t requires df > 2");
        const double m1 = abs_t_moment(df, 1);
        const double m2 = df / (df - 2.0);
        mean = m1 * (xi - 1.0 / xi);
        const double ex2 = m2 * (xi * xi - 1.0 + 1.0 / (xi * xi));
        sd = std::sqrt(ex2 - mean * mean);
    }

    double draw(Rng& rng) const {
        const double t = std::fabs(rng.student_t(df));
        const double p_pos = xi * xi / (1.0 + xi * xi);
        return (rng.uniform() < p_pos) ? xi * t : -t / xi;
    }

    /// Draw standardized to mean 0, variance `var`.
    double draw_standardized(Rng& rng, double var) const {
        return (draw(rng) - mean) / sd * std::sqrt(var);
    }
};

} // namespace dflab

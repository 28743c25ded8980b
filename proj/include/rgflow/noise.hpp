#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <vector>

#include "grid.hpp"
#include "kernels.hpp"

namespace rgflow {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Uniform in (0, 1) from the counter value at position i of a stream.
inline double counter_uniform(std::uint64_t stream, std::uint64_t i) {
    std::uint64_t b = splitmix64(stream ^ splitmix64(i));
    return (double(b >> 11) + 0.5) * 0x1.0p-53;
}

struct EnsembleSpec {
    std::uint64_t base_seed = 1;
    std::size_t count = 1;

    std::uint64_t member_seed(std::size_t idx) const {
        return splitmix64(base_seed ^ splitmix64(std::uint64_t(idx) + 0x9e3779b97f4a7c15ull));
    }
};

/// White noise on the lattice: i.i.d. N(0, h^{-d}) per site.
class NoiseRealization {
public:
    NoiseRealization(const TorusGrid& g, std::uint64_t seed) : seed_(seed), values_(g) {
        const std::size_t N = g.sites();
        const double scale = 1.0 / std::sqrt(g.cell());
        for (std::size_t p = 0; 2 * p < N; ++p) {
            double u1 = counter_uniform(seed, 2 * p);
            double u2 = counter_uniform(seed, 2 * p + 1);
            double r = std::sqrt(-2.0 * std::log(u1));
            double a = 2.0 * std::numbers::pi * u2;
            values_[2 * p] = scale * r * std::cos(a);
            if (2 * p + 1 < N) values_[2 * p + 1] = scale * r * std::sin(a);
        }
    }

    NoiseRealization(std::uint64_t seed, Field values) : seed_(seed), values_(std::move(values)) {}

    std::uint64_t seed() const { return seed_; }
    const Field& values() const { return values_; }
    const TorusGrid& grid() const { return values_.grid(); }

    /// theta_kappa * xi, cached per (kappa, sigma).
    const Field& mollified(double kappa, double sigma) const {
        auto key = std::make_pair(kappa, sigma);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        Field f = convolve(values_, mollifier(grid(), kappa, sigma));
        return cache_.emplace(key, std::move(f)).first->second;
    }

private:
    std::uint64_t seed_;
    Field values_;
    mutable std::map<std::pair<double, double>, Field> cache_;
};

inline NoiseRealization sample_noise(const TorusGrid& g, std::uint64_t seed) { return NoiseRealization(g, seed); }

inline Field mollify(const NoiseRealization& xi, double kappa, double sigma) { return xi.mollified(kappa, sigma); }

/// Pointwise variance of (M * xi) for white noise: (2pi)^{-d} sum_k |M(k)|^2.
inline double white_noise_variance(const TorusGrid& g, std::span<const cplx> multiplier) {
    double s = 0.0;
    for (std::size_t i = 0; i < multiplier.size(); ++i) s += g.mode_weight(i) * std::norm(multiplier[i]);
    return s / std::pow(2.0 * std::numbers::pi, g.d());
}

/// Mirror x -> -x.
inline Field reflect(const Field& f) {
    Field r(f.grid());
    for (std::size_t s = 0; s < f.size(); ++s) r[s] = f[f.grid().neg(s)];
    return r;
}

}  // namespace rgflow

#pragma once

// Independent reference computations used by unit and acceptance tests. Every
// function here works from definitions by direct summation, never through the
// FFT paths or flow code it is checking.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <rgflow/grid.hpp>
#include <rgflow/tensor.hpp>

namespace oracle {

using namespace rgflow;

inline Field random_field(const TorusGrid& g, unsigned seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    Field f(g);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = nd(rng);
    return f;
}

inline DenseCoeffTensor random_dense(const TorusGrid& g, int legs, unsigned seed) {
    DenseCoeffTensor t(g, legs);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    for (double& v : t.data()) v = nd(rng);
    return t;
}

/// Direct convolution h^d sum_y k(x - y) a(y).
inline Field convolve_direct(const Field& a, const Field& k) {
    const TorusGrid& g = a.grid();
    Field out(g);
    for (std::size_t x = 0; x < g.sites(); ++x) {
        double s = 0.0;
        for (std::size_t y = 0; y < g.sites(); ++y) s += k[g.diff(x, y)] * a[y];
        out[x] = s * g.cell();
    }
    return out;
}

/// Average over all permutations of the leg slots of an anchor-major tensor.
inline std::vector<double> symmetrize_legs(const TorusGrid& g, int legs, const std::vector<double>& v) {
    if (legs <= 1) return v;
    const std::size_t N = g.sites();
    std::vector<int> perm(static_cast<std::size_t>(legs));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<double> out(v.size(), 0.0);
    int count = 0;
    std::vector<std::size_t> idx(static_cast<std::size_t>(legs)), pidx(static_cast<std::size_t>(legs));
    do {
        ++count;
        for (std::size_t flat = 0; flat < v.size(); ++flat) {
            std::size_t r = flat;
            for (int j = legs - 1; j >= 0; --j) {
                idx[std::size_t(j)] = r % N;
                r /= N;
            }
            std::size_t x = r, dst = x;
            for (int j = 0; j < legs; ++j) pidx[std::size_t(j)] = idx[std::size_t(perm[std::size_t(j)])];
            for (int j = 0; j < legs; ++j) dst = dst * N + pidx[std::size_t(j)];
            out[dst] += v[flat];
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (double& x : out) x /= count;
    return out;
}

/// B(G, W, U)(x; y, w) = Sym h^{2d} sum_{z, z'} W(x; z, y) G(z - z') U(z'; w), by nested sums.
inline std::vector<double> b_map_direct(const Field& Gdens, const DenseCoeffTensor& W, const DenseCoeffTensor& U) {
    const TorusGrid& g = W.grid();
    const std::size_t N = g.sites();
    const int k = W.legs() - 1, q = U.legs(), m = k + q;
    const std::size_t A = ipow(N, k), B = ipow(N, q);
    const double h = g.cell();
    std::vector<double> raw(N * A * B, 0.0);
    for (std::size_t x = 0; x < N; ++x)
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t b = 0; b < B; ++b) {
                double s = 0.0;
                for (std::size_t z = 0; z < N; ++z) {
                    double w = W.data()[(x * N + z) * A + a];
                    if (w == 0.0) continue;
                    double inner = 0.0;
                    for (std::size_t zp = 0; zp < N; ++zp) inner += Gdens[g.diff(z, zp)] * U.data()[zp * B + b];
                    s += w * inner;
                }
                raw[(x * A + a) * B + b] = s * h * h;
            }
    return symmetrize_legs(g, m, raw);
}

inline double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Trees of the effective force expanded at phi = 0. `small` is the density of
/// G - G_mu and `xi` the mollified noise; c1, c2 are the counterterms.
struct Trees {
    Field b1;   // (G - G_mu) * xi
    Field b2;   // b1^2 + c1/3
    Field f10;  // b1^3 + c1 b1
    Field T;    // (G - G_mu) * f10
    Field f20;  // 3 b2 T + c2 b1
    Field small;

    Trees(const Field& small_density, const Field& xi, double c1, double c2) : small(small_density) {
        b1 = convolve_direct(xi, small);
        b2 = b1 * b1;
        for (std::size_t s = 0; s < b2.size(); ++s) b2[s] += c1 / 3.0;
        f10 = b1 * b1 * b1;
        f10.axpy(c1, b1);
        T = convolve_direct(f10, small);
        f20 = 3.0 * (b2 * T);
        f20.axpy(c2, b1);
    }

    /// F^{2,1}(x; y) densified on the lattice.
    std::vector<double> f21(double c2) const {
        const TorusGrid& g = b1.grid();
        const std::size_t N = g.sites();
        std::vector<double> v(N * N, 0.0);
        for (std::size_t x = 0; x < N; ++x) {
            v[x * N + x] += (6.0 * b1[x] * T[x] + c2) / g.cell();
            for (std::size_t y = 0; y < N; ++y) v[x * N + y] += 9.0 * b2[x] * small[g.diff(x, y)] * b2[y];
        }
        return v;
    }
};

}  // namespace oracle

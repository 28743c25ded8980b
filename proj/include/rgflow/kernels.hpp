#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "grid.hpp"

namespace rgflow {

struct KernelError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Scale length [mu] = mu^{1/sigma}.
inline double scale_length(double mu, double sigma) { return std::pow(mu, 1.0 / sigma); }

/// Smooth step: 0 for |r| <= 1/4, 1 for |r| >= 1/2, in between the
/// normalized integral of the bump t^p (1-t)^p with t = 4|r| - 1.
struct ChiSpec {
    int p = 4;

    double beta_norm() const {
        // B(p+1, p+1) = p! p! / (2p+1)!
        double b = 1.0;
        for (int i = 1; i <= p; ++i) b *= double(i) / double(p + i);
        return b / double(2 * p + 1);
    }

    double operator()(double r) const {
        double a = std::abs(r);
        if (a <= 0.25) return 0.0;
        if (a >= 0.5) return 1.0;
        double t = 4.0 * a - 1.0;
        int n = 2 * p + 1;
        double s = 0.0;
        for (int j = p + 1; j <= n; ++j) s += binom(n, j) * std::pow(t, j) * std::pow(1.0 - t, n - j);
        return s;
    }

    double derivative(double r) const {
        double a = std::abs(r);
        if (a <= 0.25 || a >= 0.5) return 0.0;
        double t = 4.0 * a - 1.0;
        double v = 4.0 * std::pow(t, p) * std::pow(1.0 - t, p) / beta_norm();
        return r < 0 ? -v : v;
    }

    static double binom(int n, int k) {
        double r = 1.0;
        for (int i = 1; i <= k; ++i) r = r * double(n - k + i) / double(i);
        return r;
    }
};

/// Fractional Green function of (1 - Laplacian)^{sigma/2} on the torus.
inline GridKernel green_kernel(const TorusGrid& g, double sigma) {
    if (!(sigma > 0.0 && sigma <= 2.0)) throw KernelError("green kernel: sigma must lie in (0, 2]");
    if (g.d() == 1 && sigma > 1.0) {
        // bounded kernel: alias the full symbol so the density samples G exactly
        const int J = 256;
        const double n = g.n();
        std::vector<cplx> m(g.modes());
        for (std::size_t i = 0; i < m.size(); ++i) {
            double k = double(i), acc = 0.0;
            for (int j = J; j >= -J; --j) acc += std::pow(1.0 + (k + j * n) * (k + j * n), -sigma / 2.0);
            for (double sgn : {1.0, -1.0}) acc += std::pow((J + 0.5) * n + sgn * k, 1.0 - sigma) / (n * (sigma - 1.0));
            m[i] = acc;
        }
        return GridKernel::from_multiplier(g, std::move(m));
    }
    return GridKernel::from_symbol(g, [sigma](double k2) { return std::pow(1.0 + k2, -sigma / 2.0); });
}

/// Radius fed into chi_mu(|x|^sigma); the origin site uses its cell-mean radius.
inline double site_radius(const TorusGrid& g, std::size_t s) {
    return s == 0 ? g.cell_mean_radius() : g.radius(s);
}

/// G_mu density. mu = 0 returns G.
inline Field cutoff_green(const Field& G, double sigma, double mu, const ChiSpec& chi = {}) {
    if (mu < 0.0 || mu > 1.0) throw KernelError("scale decomposition: mu must lie in [0, 1]");
    if (mu == 0.0) return G;
    Field out(G.grid());
    for (std::size_t s = 0; s < G.size(); ++s) {
        double r = std::pow(site_radius(G.grid(), s), sigma);
        out[s] = chi(r * (1.0 - mu) / mu) * G[s];
    }
    return out;
}

/// Gdot_mu density: d/dmu chi_mu(|x|^sigma) times G.
inline Field cutoff_green_derivative(const Field& G, double sigma, double mu, const ChiSpec& chi = {}) {
    if (!(mu > 0.0 && mu <= 1.0)) throw KernelError("scale decomposition: derivative needs mu in (0, 1]");
    Field out(G.grid());
    for (std::size_t s = 0; s < G.size(); ++s) {
        double r = std::pow(site_radius(G.grid(), s), sigma);
        out[s] = chi.derivative(r * (1.0 - mu) / mu) * (-r / (mu * mu)) * G[s];
    }
    return out;
}

/// (G_mu, Gdot_mu) as kernels.
inline std::pair<GridKernel, GridKernel> scale_decomposition(const GridKernel& G, double sigma, double mu,
                                                             const ChiSpec& chi = {}) {
    if (mu == 0.0) return {G, GridKernel::from_density(Field(G.grid()))};
    return {GridKernel::from_density(cutoff_green(G.density(), sigma, mu, chi)),
            GridKernel::from_density(cutoff_green_derivative(G.density(), sigma, mu, chi))};
}

/// Multiplier of Ktilde_mu: (1 + [mu]^2 |k|^2)^{-(d+2)}.
inline std::vector<double> regularizer_symbol(const TorusGrid& g, double mu, double sigma, int power = 1) {
    double L2 = mu == 0.0 ? 0.0 : std::pow(scale_length(mu, sigma), 2);
    std::vector<double> s(g.modes());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::pow(1.0 + L2 * g.k2(i), -double(power * (g.d() + 2)));
    return s;
}

inline GridKernel symbol_kernel(const TorusGrid& g, std::span<const double> sym) {
    std::vector<cplx> m(sym.begin(), sym.end());
    return GridKernel::from_multiplier(g, std::move(m));
}

/// (Ktilde_mu, K_mu).
inline std::pair<GridKernel, GridKernel> regularizer(const TorusGrid& g, double mu, double sigma) {
    if (mu < 0.0 || mu > 1.0) throw KernelError("regularizer: mu must lie in [0, 1]");
    auto kt = regularizer_symbol(g, mu, sigma, 1);
    auto k = regularizer_symbol(g, mu, sigma, 3);
    return {symbol_kernel(g, kt), symbol_kernel(g, k)};
}

/// Multiplier of K_{mu,eta} = K_mu / K_eta for eta <= mu.
inline std::vector<double> transfer_symbol(const TorusGrid& g, double mu, double eta, double sigma) {
    if (eta > mu) throw KernelError("transfer kernel: requires eta <= mu");
    if (eta < 0.0) throw KernelError("transfer kernel: negative scale");
    auto km = regularizer_symbol(g, mu, sigma, 3);
    auto ke = regularizer_symbol(g, eta, sigma, 3);
    for (std::size_t i = 0; i < km.size(); ++i) km[i] /= ke[i];
    return km;
}

inline GridKernel transfer_kernel(const TorusGrid& g, double mu, double eta, double sigma) {
    auto s = transfer_symbol(g, mu, eta, sigma);
    return symbol_kernel(g, s);
}

/// Profile exp(-1/(1-|x|^2)) on the unit ball.
struct BumpProfile {
    double operator()(double r) const { return r < 1.0 ? std::exp(-1.0 / (1.0 - r * r)) : 0.0; }
};

/// Rescaled mollifier [kappa]^{-d} theta(x/[kappa]) normalized on the lattice.
template <class Profile = BumpProfile>
GridKernel mollifier(const TorusGrid& g, double kappa, double sigma, Profile profile = {}) {
    if (!(kappa > 0.0 && kappa <= 1.0)) throw KernelError("mollifier: kappa must lie in (0, 1]");
    double L = scale_length(kappa, sigma);
    if (L < 4.0 * g.h())
        throw KernelError("mollifier: under-resolved kappa ([kappa] = " + std::to_string(L) + " < 4h = " +
                          std::to_string(4.0 * g.h()) + ")");
    Field dens(g);
    for (std::size_t s = 0; s < g.sites(); ++s) dens[s] = profile(g.radius(s) / L);
    double mass = dens.integral();
    dens *= 1.0 / mass;
    return GridKernel::from_density(std::move(dens));
}

/// Geometric scale grid from mu_min to 1/2 (points_to_half nodes), continued
/// with the same ratio up to 1, with the boundary node 0 in front.
struct ScaleGrid {
    std::vector<double> nodes;
    std::size_t half = 0;

    static ScaleGrid geometric(double mu_min, int points_to_half) {
        if (!(mu_min > 0.0 && mu_min < 0.5)) throw KernelError("scale grid: mu_min must lie in (0, 1/2)");
        if (points_to_half < 2) throw KernelError("scale grid: need at least two points");
        ScaleGrid s;
        s.nodes.push_back(0.0);
        double ratio = std::pow(0.5 / mu_min, 1.0 / double(points_to_half - 1));
        for (int j = 0; j < points_to_half - 1; ++j) s.nodes.push_back(mu_min * std::pow(ratio, j));
        s.half = s.nodes.size();
        s.nodes.push_back(0.5);
        for (int j = 1;; ++j) {
            double v = 0.5 * std::pow(ratio, j);
            if (v >= 1.0 - 1e-12) break;
            s.nodes.push_back(v);
        }
        s.nodes.push_back(1.0);
        return s;
    }

    /// Nested refinement: halves the log-spacing.
    static ScaleGrid refined(double mu_min, int points_to_half, int level) {
        int p = points_to_half;
        for (int i = 0; i < level; ++i) p = 2 * p - 1;
        return geometric(mu_min, p);
    }

    std::size_t size() const { return nodes.size(); }
    std::size_t intervals() const { return nodes.size() - 1; }
    double mid(std::size_t l) const { return 0.5 * (nodes[l] + nodes[l + 1]); }
    double width(std::size_t l) const { return nodes[l + 1] - nodes[l]; }

    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ull;
        for (double v : nodes) {
            std::uint64_t b;
            std::memcpy(&b, &v, sizeof b);
            h = (h ^ b) * 1099511628211ull;
        }
        return h;
    }
};

/// Precomputed kernels over a scale grid: G_mu at nodes, Gdot at interval
/// midpoints, and regularizer symbols at both.
class KernelFamily {
public:
    KernelFamily(const TorusGrid& g, double sigma, ScaleGrid scales, ChiSpec chi = {})
        : grid_(g), sigma_(sigma), scales_(std::move(scales)), chi_(chi), G_(green_kernel(g, sigma)) {
        if (!(sigma > double(g.d()) / 3.0 && sigma <= double(g.d()) / 2.0 + 1e-12))
            throw KernelError("kernel family: sigma must lie in (d/3, d/2]");
        for (double mu : scales_.nodes) {
            G_nodes_.push_back(cutoff_green(G_.density(), sigma, mu, chi));
            K_nodes_.push_back(regularizer_symbol(g, mu, sigma, 3));
        }
        for (std::size_t l = 0; l < scales_.intervals(); ++l) {
            double mu = scales_.mid(l);
            Gdot_mid_.push_back(GridKernel::from_density(cutoff_green_derivative(G_.density(), sigma, mu, chi)));
            K_mid_.push_back(regularizer_symbol(g, mu, sigma, 3));
        }
        build_steps();
    }

    /// Rebuild from stored densities (cache load path).
    KernelFamily(const TorusGrid& g, double sigma, ScaleGrid scales, ChiSpec chi, std::vector<Field> g_nodes,
                 std::vector<Field> gdot_mid)
        : grid_(g), sigma_(sigma), scales_(std::move(scales)), chi_(chi), G_(green_kernel(g, sigma)) {
        if (g_nodes.size() != scales_.size() || gdot_mid.size() != scales_.intervals())
            throw KernelError("kernel family: cache shape mismatch");
        G_nodes_ = std::move(g_nodes);
        for (double mu : scales_.nodes) K_nodes_.push_back(regularizer_symbol(g, mu, sigma, 3));
        for (std::size_t l = 0; l < scales_.intervals(); ++l) {
            Gdot_mid_.push_back(GridKernel::from_density(std::move(gdot_mid[l])));
            K_mid_.push_back(regularizer_symbol(g, scales_.mid(l), sigma, 3));
        }
        build_steps();
    }

    const TorusGrid& grid() const { return grid_; }
    double sigma() const { return sigma_; }
    const ScaleGrid& scales() const { return scales_; }
    const ChiSpec& chi() const { return chi_; }
    const GridKernel& G() const { return G_; }
    const Field& G_node(std::size_t l) const { return G_nodes_[l]; }
    const GridKernel& Gdot_mid(std::size_t l) const { return Gdot_mid_[l]; }
    /// Integral of Gdot over interval l, i.e. G_{l+1} - G_l.
    const GridKernel& step(std::size_t l) const { return step_[l]; }
    const std::vector<double>& K_node(std::size_t l) const { return K_nodes_[l]; }
    const std::vector<double>& K_mid(std::size_t l) const { return K_mid_[l]; }
    double length(double mu) const { return scale_length(mu, sigma_); }

    /// (G - G_mu) at node l as a kernel.
    GridKernel small_scale_green(std::size_t l) const {
        Field d = G_.density();
        d -= G_nodes_[l];
        return GridKernel::from_density(std::move(d));
    }

    /// ||Ptilde_mu^l Gdot_mu||_K at an interval midpoint.
    double ptilde_gdot_norm(std::size_t l, int power) const {
        const auto& gd = Gdot_mid_[l].multiplier();
        double L2 = std::pow(length(scales_.mid(l)), 2);
        std::vector<cplx> m(gd.size());
        for (std::size_t i = 0; i < m.size(); ++i)
            m[i] = gd[i] * std::pow(1.0 + L2 * grid_.k2(i), double(power * (grid_.d() + 2)));
        return GridKernel::from_multiplier(grid_, std::move(m)).tv_norm();
    }

    /// ||Gtilde_mu||_K with Gtilde = P_mu^2 Gdot_mu, at an interval midpoint.
    double gtilde_norm(std::size_t l) const { return ptilde_gdot_norm(l, 6); }

    /// C_G = sup over midpoints of ||Gtilde_mu||_K.
    double c_g() const {
        double c = 0.0;
        for (std::size_t l = 0; l < scales_.intervals(); ++l) c = std::max(c, gtilde_norm(l));
        return c;
    }

private:
    void build_steps() {
        for (std::size_t l = 0; l < scales_.intervals(); ++l)
            step_.push_back(GridKernel::from_density(G_nodes_[l + 1] - G_nodes_[l]));
    }

    TorusGrid grid_;
    double sigma_;
    ScaleGrid scales_;
    ChiSpec chi_;
    GridKernel G_;
    std::vector<Field> G_nodes_;
    std::vector<std::vector<double>> K_nodes_;
    std::vector<GridKernel> Gdot_mid_;
    std::vector<GridKernel> step_;
    std::vector<std::vector<double>> K_mid_;
};

/// max over the positive nodes of [mu]^{-alpha} ||K_mu * phi||.
inline double besov_norm(const Field& phi, double alpha, const KernelFamily& kf) {
    const auto& nodes = kf.scales().nodes;
    if (nodes.size() < 2) throw KernelError("besov norm: empty scale grid");
    double best = 0.0;
    for (std::size_t l = 0; l < nodes.size(); ++l) {
        if (nodes[l] <= 0.0) continue;
        double v = std::pow(kf.length(nodes[l]), -alpha) * apply_symbol(phi, kf.K_node(l)).sup_norm();
        best = std::max(best, v);
    }
    return best;
}

}  // namespace rgflow

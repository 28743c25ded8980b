#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "coeffs.hpp"
#include "grid.hpp"
#include "kernels.hpp"
#include "renorm.hpp"

namespace rgflow {

struct ConvergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SolverConfig {
    double lambda = 0.0;
    double R = 1.0;
    double alpha = -0.1;
    double beta = 0.1;
    int m_flat = 3;
    int max_iter = 200;
    double tol = 1e-12;
    bool override_lambda = false;

    double lambda_star() const { return 1.0 / std::pow(2.0 * R * R, 3); }

    void validate() const {
        if (!(beta > 0.0)) throw std::invalid_argument("solver: beta must be positive");
        if (!(alpha < 0.0)) throw std::invalid_argument("solver: alpha must be negative");
        if (!(R >= 1.0)) throw std::invalid_argument("solver: R must be at least 1");
        if (std::abs(lambda) > lambda_star() && !override_lambda)
            throw std::invalid_argument("solver: |lambda| exceeds lambda_star; set override to proceed");
    }
};

/// Ball radius realized from data: R = max(1, lemma bound, coefficient bound).
struct RadiusCalibration {
    double coefficient_bound = 0.0;
    double lemma_bound = 0.0;
    double c_g = 0.0;
    double R = 1.0;
};

/// sup over stored (i,m) and nodes mu in (0, 1/2] of [mu]^{-rho} ||K^{(1+m)} * F^{i,m}||.
inline double coefficient_bound(const FlowHistory& hist, const KernelFamily& kf, const PowerCounting& pc,
                                std::size_t stride = 1) {
    double b = 0.0;
    for (std::size_t l = 1; l <= hist.half(); l += stride)
        for (const auto& [key, rep] : hist.node(l)) {
            if (rep.is_zero()) continue;
            double v = smoothed_vm_norm(rep, kf.K_node(l)) * std::pow(kf.length(kf.scales().nodes[l]),
                                                                        -pc.rho(key.first, key.second));
            b = std::max(b, v);
        }
    return b;
}

inline RadiusCalibration calibrate_radius(double coeff_bound, double c_g, double sigma, double alpha, double beta,
                                          double c = 1.0) {
    RadiusCalibration r;
    r.coefficient_bound = c * coeff_bound;
    r.c_g = c_g;
    r.lemma_bound = 100.0 * sigma * std::max(c_g, 1.0) / std::min(std::abs(alpha), beta) * (1.0 + 1e-12);
    r.R = std::max({1.0, r.coefficient_bound, r.lemma_bound});
    return r;
}

/// (Phi_mu, zeta_mu) at every node; tilde views follow from P_mu and K_mu.
struct SolverState {
    std::vector<Field> phi;
    std::vector<Field> zeta;

    static SolverState zero(const TorusGrid& g, std::size_t nodes) {
        return {std::vector<Field>(nodes, Field(g)), std::vector<Field>(nodes, Field(g))};
    }
};

/// sup_mu [mu]^{-alpha} ||Phi_mu|| + R sup_mu [mu]^{-beta} ||K_mu * zeta_mu|| over positive nodes.
inline double ball_norm(const SolverState& s, const KernelFamily& kf, const SolverConfig& cfg) {
    double a = 0.0, b = 0.0;
    const auto& nodes = kf.scales().nodes;
    for (std::size_t l = 1; l < nodes.size(); ++l) {
        double L = kf.length(nodes[l]);
        double va = std::pow(L, -cfg.alpha) * s.phi[l].sup_norm();
        double vb = std::pow(L, -cfg.beta) * apply_symbol(s.zeta[l], kf.K_node(l)).sup_norm();
        if (std::isnan(va) || std::isnan(vb)) return std::numeric_limits<double>::quiet_NaN();
        a = std::max(a, va);
        b = std::max(b, vb);
    }
    return a + cfg.R * b;
}

inline double ball_distance(const SolverState& x, const SolverState& y, const KernelFamily& kf,
                            const SolverConfig& cfg) {
    SolverState d = x;
    for (std::size_t l = 0; l < d.phi.size(); ++l) {
        d.phi[l] -= y.phi[l];
        d.zeta[l] -= y.zeta[l];
    }
    return ball_norm(d, kf, cfg);
}

/// One application of the fixed-point map on the scale grid. Both integrals
/// use the interval increments of G_mu with coefficients and state averaged at
/// interval midpoints.
inline SolverState q_apply(const SolverState& s, const FlowHistory& hist, const KernelFamily& kf,
                           const SolverConfig& cfg) {
    const std::size_t L = kf.scales().size();
    if (s.phi.size() != L || s.zeta.size() != L || hist.size() != L)
        throw std::invalid_argument("solver: state and scale grid mismatch");
    const TorusGrid& g = kf.grid();
    SolverState out = SolverState::zero(g, L);
    std::vector<Field> phi_mid(L - 1), x_mid(L - 1);
    for (std::size_t l = 0; l + 1 < L; ++l) {
        phi_mid[l] = 0.5 * (s.phi[l] + s.phi[l + 1]);
        Field zm = 0.5 * (s.zeta[l] + s.zeta[l + 1]);
        x_mid[l] = contract_force(hist.mid(l), cfg.lambda, phi_mid[l]) + zm;
    }
    for (std::size_t l = L - 1; l-- > 0;) out.phi[l] = out.phi[l + 1] - convolve(x_mid[l], kf.step(l));
    for (std::size_t l = 0; l + 1 < L; ++l) {
        const CoeffSet& F = hist.mid(l);
        Field zm = 0.5 * (s.zeta[l] + s.zeta[l + 1]);
        Field inc = h_functional(F, cfg.lambda, phi_mid[l], kf.step(l), hist.frozen(l));
        inc += force_derivative(F, cfg.lambda, phi_mid[l], convolve(zm, kf.step(l)));
        out.zeta[l + 1] = out.zeta[l] - inc;
    }
    return out;
}

struct EffectiveSolution {
    SolverState state;
    Field phi_kappa;
    double reconstruction_gap = 0.0;
    std::vector<double> distances;
    std::vector<double> ratios;
    int iterations = 0;
    bool converged = false;
};

inline bool finite_state(const SolverState& s) {
    auto ok = [](const Field& f) {
        return std::all_of(f.values().begin(), f.values().end(), [](double v) { return std::isfinite(v); });
    };
    return std::all_of(s.phi.begin(), s.phi.end(), ok) && std::all_of(s.zeta.begin(), s.zeta.end(), ok);
}

inline EffectiveSolution solve_effective(const FlowHistory& hist, const KernelFamily& kf, const SolverConfig& cfg,
                                         SolverState start = {}) {
    cfg.validate();
    const std::size_t L = kf.scales().size();
    EffectiveSolution sol;
    sol.state = start.phi.empty() ? SolverState::zero(kf.grid(), L) : std::move(start);
    for (int it = 1; it <= cfg.max_iter; ++it) {
        SolverState next = q_apply(sol.state, hist, kf, cfg);
        double d = ball_distance(next, sol.state, kf, cfg);
        double scale = std::max(1.0, ball_norm(next, kf, cfg));
        if (!std::isfinite(d) || !finite_state(next)) throw ConvergenceError("solver: non-finite iterate");
        if (!sol.distances.empty() && sol.distances.back() > 0.0) sol.ratios.push_back(d / sol.distances.back());
        sol.distances.push_back(d);
        sol.state = std::move(next);
        sol.iterations = it;
        if (d <= cfg.tol * scale) {
            sol.converged = true;
            break;
        }
    }
    if (!sol.converged)
        throw ConvergenceError("solver: iteration cap reached, last ratio " +
                               std::to_string(sol.ratios.empty() ? 0.0 : sol.ratios.back()));
    return sol;
}

/// Phi_kappa rebuilt from node l: Phi_l + (G - G_l) * (F_l[Phi_l] + zeta_l).
inline Field reconstruct_at(const EffectiveSolution& sol, const FlowHistory& hist, const KernelFamily& kf,
                            double lambda, std::size_t l) {
    const Field& phi = sol.state.phi[l];
    Field x = contract_force(hist.node(l), lambda, phi) + sol.state.zeta[l];
    return phi + convolve(x, kf.small_scale_green(l));
}

/// Reconstruction at the smallest positive scale, with the gap to the next scale.
inline Field reconstruct_phi(EffectiveSolution& sol, const FlowHistory& hist, const KernelFamily& kf, double lambda,
                             double gap_limit = 0.0) {
    Field a = reconstruct_at(sol, hist, kf, lambda, 1);
    Field b = reconstruct_at(sol, hist, kf, lambda, 2);
    sol.reconstruction_gap = sup_distance(a, b);
    if (gap_limit > 0.0 && sol.reconstruction_gap > gap_limit)
        throw ConvergenceError("reconstruction: gap exceeds limit, mu_min under-resolved");
    sol.phi_kappa = a;
    return a;
}

/// F_kappa[phi] = xi + lambda phi^3 + sum_i lambda^i c_i phi.
inline Field original_force(const Field& xi, double lambda, std::span<const double> c, const Field& phi) {
    Field out = xi;
    Field cube = phi * phi * phi;
    out.axpy(lambda, cube);
    double p = lambda;
    for (double ci : c) {
        out.axpy(p * ci, phi);
        p *= lambda;
    }
    return out;
}

inline double equation_residual(const Field& phi, const Field& xi, double lambda, std::span<const double> c,
                                 const GridKernel& G) {
    Field r = phi - convolve(original_force(xi, lambda, c, phi), G);
    return r.sup_norm() / std::max(phi.sup_norm(), 1e-300);
}

struct PicardResult {
    Field phi;
    int iterations = 0;
    double residual = 0.0;
};

inline PicardResult direct_picard(const Field& xi, double lambda, std::span<const double> c, const GridKernel& G,
                                  double tol = 1e-13, int max_iter = 10000) {
    PicardResult r;
    r.phi = convolve(xi, G);
    double last = std::numeric_limits<double>::infinity();
    int growth = 0;
    for (int it = 1; it <= max_iter; ++it) {
        Field next = convolve(original_force(xi, lambda, c, r.phi), G);
        double res = sup_distance(next, r.phi);
        r.phi = std::move(next);
        r.iterations = it;
        r.residual = res;
        if (res <= tol * std::max(1.0, r.phi.sup_norm())) return r;
        growth = res > last ? growth + 1 : 0;
        if (growth >= 3 || !std::isfinite(res)) throw ConvergenceError("picard: divergence detected");
        last = res;
    }
    throw ConvergenceError("picard: iteration cap reached");
}

/// Remainder iteration Psi = lambda G * (Psi^3 + 3 Psi^2 <1> + 3 Psi <2> + <3>), Phi = <1> + Psi.
inline PicardResult dpd_solve(const Field& xi, double lambda, const GridKernel& G, double sigma, double c1,
                              double tol = 1e-13, int max_iter = 10000) {
    const int d = G.grid().d();
    if (!(sigma > 5.0 * d / 12.0 && sigma <= d / 2.0 + 1e-12))
        throw std::invalid_argument("dpd: sigma outside (5d/12, d/2]");
    Field t1 = convolve(xi, G);
    Field t2 = t1 * t1;
    for (std::size_t s = 0; s < t2.size(); ++s) t2[s] += c1 / 3.0;
    Field t3 = t1 * t1 * t1;
    t3.axpy(c1, t1);
    Field psi(xi.grid());
    double last = std::numeric_limits<double>::infinity();
    int growth = 0;
    for (int it = 1; it <= max_iter; ++it) {
        Field rhs = psi * psi * psi;
        rhs.axpy(3.0, psi * psi * t1);
        rhs.axpy(3.0, psi * t2);
        rhs += t3;
        Field next = lambda * convolve(rhs, G);
        double res = sup_distance(next, psi);
        psi = std::move(next);
        if (res <= tol * std::max(1.0, psi.sup_norm() + t1.sup_norm()) || lambda == 0.0)
            return {t1 + psi, it, res};
        growth = res > last ? growth + 1 : 0;
        if (growth >= 3 || !std::isfinite(res)) throw ConvergenceError("dpd: divergence detected");
        last = res;
    }
    throw ConvergenceError("dpd: iteration cap reached");
}

}  // namespace rgflow

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "coeffs.hpp"
#include "grid.hpp"
#include "kernels.hpp"
#include "noise.hpp"
#include "parallel.hpp"
#include "tensor.hpp"

namespace rgflow {

struct SupercriticalError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Exponents of the power counting and the derived truncation orders.
struct PowerCounting {
    int d = 1;
    double sigma = 0.0, eps = 0.0, alpha = 0.0, gamma = 0.0;
    int i_flat = 0, i_sharp = 0;
    static constexpr int max_order = 8;
    static constexpr double zero_tol = 1e-12;
    std::vector<std::string> flags;

    double rho(int i, int m) const { return alpha - sigma - double(m) * alpha + double(i) * gamma; }
    bool relevant(int i, int m) const { return rho(i, m) <= zero_tol; }
    double beta() const { return rho(i_flat + 1, 0); }
};

inline PowerCounting power_counting(int d, double sigma, double eps = 0.0) {
    PowerCounting pc;
    pc.d = d;
    pc.sigma = sigma;
    pc.eps = eps;
    pc.alpha = sigma - double(d) / 2.0 - eps;
    pc.gamma = 3.0 * sigma - double(d) - 3.0 * eps;
    if (!(pc.gamma > 0.0))
        throw SupercriticalError("supercritical: gamma = 3 sigma - d - 3 eps = " + std::to_string(pc.gamma) +
                                 " is not positive");
    if (eps < 0.0) throw std::invalid_argument("power counting: eps must be nonnegative");
    auto first_positive = [&](int m) {
        for (int i = 1;; ++i)
            if (pc.rho(i + 1, m) > PowerCounting::zero_tol) return i;
    };
    pc.i_flat = first_positive(0);
    pc.i_sharp = first_positive(1);
    for (int i = 0; i <= std::max(pc.i_flat + 1, pc.i_sharp + 1); ++i)
        for (int m = 0; m <= 1; ++m)
            if (std::abs(pc.rho(i, m)) <= PowerCounting::zero_tol && !(i == 0 && m == 0))
                pc.flags.push_back("boundary: rho(" + std::to_string(i) + "," + std::to_string(m) +
                                   ") = 0, treated as relevant");
    return pc;
}

/// rho_eps(i,m) + l > 0 whenever rho_0(i,m) + l > 0 over the stored table.
inline bool eps_admissible(int d, double sigma, double eps, int max_l = 3) {
    PowerCounting p0 = power_counting(d, sigma, 0.0);
    PowerCounting pe = power_counting(d, sigma, eps);
    for (int i = 0; i <= PowerCounting::max_order; ++i)
        for (int m = 0; m <= 3 * i; ++m)
            for (int l = 0; l <= max_l; ++l)
                if (p0.rho(i, m) + l > PowerCounting::zero_tol && !(pe.rho(i, m) + l > 0.0)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Taylor split of a translation-invariant, even one-leg kernel.

enum class TaylorScheme { Quadrature, Lattice };

struct TaylorSplit {
    double iv = 0.0;
    /// Remainder profiles r_a(s) = R^a V(0; s), one per multi-index |a| = 2.
    std::vector<std::array<int, 2>> multi;
    std::vector<Field> remainders;
    /// Remainders as one-leg kernels R(x; y) = r(y - x).
    CoeffRep remainder_kernel(std::size_t k) const {
        const Field& r = remainders[k];
        const TorusGrid& g = r.grid();
        DenseCoeffTensor T(g, 1);
        for (std::size_t x = 0; x < g.sites(); ++x)
            for (std::size_t y = 0; y < g.sites(); ++y) {
                std::size_t ys[1] = {y};
                T.at(x, ys) = r[g.diff(y, x)];
            }
        T.set_symmetric(true);
        return CoeffRep(std::move(T));
    }
};

/// Profile v(s) = V(0; s) after checking translation invariance and parity.
inline Field one_leg_profile(const CoeffRep& V, double tol = 1e-10) {
    if (V.legs() != 1) throw std::invalid_argument("taylor split: needs a one-leg kernel");
    const TorusGrid& g = V.grid();
    const std::size_t N = g.sites();
    DenseCoeffTensor T = V.densify();
    Field v(g);
    double scale = 0.0;
    for (std::size_t s = 0; s < N; ++s) {
        std::size_t ys[1] = {s};
        v[s] = T.at(0, ys);
        scale = std::max(scale, std::abs(v[s]));
    }
    double thr = tol * std::max(scale, 1e-300);
    for (std::size_t x = 0; x < N; ++x)
        for (std::size_t y = 0; y < N; ++y) {
            std::size_t ys[1] = {y};
            if (std::abs(T.at(x, ys) - v[g.diff(y, x)]) > thr)
                throw std::invalid_argument("taylor split: kernel is not translation invariant");
        }
    for (std::size_t s = 0; s < N; ++s)
        if (std::abs(v[s] - v[g.neg(s)]) > thr) throw std::invalid_argument("taylor split: kernel is not even");
    return v;
}

/// V = (I V) delta + sum_{|a|=2} d^a R^a V. The quadrature scheme evaluates the
/// tau integral with 32-point Gauss-Legendre and nearest-site lookup; the
/// lattice scheme (d = 1) uses the discrete remainder h^2 sum_{k>j} (k-j) v_k,
/// which reconstructs exactly against the lattice second difference.
inline TaylorSplit taylor_split(const CoeffRep& V, TaylorScheme scheme = TaylorScheme::Quadrature) {
    Field v = one_leg_profile(V);
    const TorusGrid& g = v.grid();
    const std::size_t N = g.sites();
    const int n = g.n();
    const double h = g.h();
    TaylorSplit out{v.integral(), {}, {}};
    if (scheme == TaylorScheme::Lattice) {
        if (g.d() != 1) throw std::invalid_argument("taylor split: lattice scheme needs d = 1");
        out.multi.push_back({2, 0});
        Field r(g);
        for (int j = -n / 2 + 1; j <= n / 2; ++j) {
            double s = 0.0;
            if (j >= 0) {
                for (int k = j + 1; k <= n / 2; ++k) s += double(k - j) * v[g.index(k)];
            } else {
                for (int k = j - 1; k > -n / 2; --k) s += double(j - k) * v[g.index(k)];
            }
            r[g.index(j)] = h * h * s;
        }
        out.remainders.push_back(std::move(r));
        return out;
    }
    using GL = boost::math::quadrature::gauss<double, 32>;
    std::vector<double> tn, tw;
    for (std::size_t i = 0; i < GL::abscissa().size(); ++i) {
        double a = GL::abscissa()[i], w = GL::weights()[i];
        tn.push_back(0.5 * (1.0 + a));
        tw.push_back(0.5 * w);
        if (a != 0.0) {
            tn.push_back(0.5 * (1.0 - a));
            tw.push_back(0.5 * w);
        }
    }
    const int d = g.d();
    std::vector<std::array<int, 2>> multis =
        d == 1 ? std::vector<std::array<int, 2>>{{2, 0}} : std::vector<std::array<int, 2>>{{2, 0}, {1, 1}, {0, 2}};
    for (auto a : multis) {
        double fact = 1.0;
        for (int c : a) fact *= c == 2 ? 2.0 : 1.0;
        double pref = 2.0 / fact;
        Field r(g);
        for (std::size_t s = 0; s < N; ++s) {
            double off[2] = {g.coord(s, 0), d == 2 ? g.coord(s, 1) : 0.0};
            double acc = 0.0;
            for (std::size_t q = 0; q < tn.size(); ++q) {
                double tau = tn[q];
                double u[2] = {off[0] / tau, off[1] / tau};
                bool inside = true;
                int idx[2] = {0, 0};
                for (int c = 0; c < d; ++c) {
                    if (std::abs(u[c]) > std::numbers::pi) inside = false;
                    idx[c] = int(std::lround(u[c] / h));
                }
                if (!inside) continue;
                // X^a(0; y) = (0 - y)^a
                double xa = 1.0;
                for (int c = 0; c < d; ++c) xa *= std::pow(-u[c], a[std::size_t(c)]);
                double val = v[g.index(idx[0], idx[1])];
                acc += tw[q] * (1.0 - tau) / std::pow(tau, d) * xa * val;
            }
            r[s] = pref * acc;
        }
        out.multi.push_back(a);
        out.remainders.push_back(std::move(r));
    }
    return out;
}

/// <V(x; .), psi> rebuilt from a split: iv psi(x) + sum_a h^d sum_y R^a(x;y) d^a psi(y),
/// with d^a psi supplied per multi-index.
inline Field taylor_reconstruct(const TaylorSplit& t, const Field& psi, const std::vector<Field>& dpsi) {
    const TorusGrid& g = psi.grid();
    Field out = t.iv * psi;
    for (std::size_t k = 0; k < t.remainders.size(); ++k) {
        const Field& r = t.remainders[k];
        Field rr(g);
        for (std::size_t s = 0; s < g.sites(); ++s) rr[s] = r[g.neg(s)];
        out += convolve(dpsi[k], GridKernel::from_density(std::move(rr)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Counterterms.

struct CountertermSchedule {
    double kappa = 0.0;
    std::vector<double> values;
    std::vector<double> stderrs;
    std::string method = "zero";
    std::size_t samples = 0;
    std::vector<std::string> flags;
};

struct MeanEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t count = 0;
};

/// Mean and standard error with pairwise summation in index order.
inline MeanEstimate mean_estimate(std::span<const double> v) {
    MeanEstimate e;
    e.count = v.size();
    if (v.empty()) return e;
    auto pairwise = [](auto&& self, std::span<const double> s) -> double {
        if (s.size() <= 8) return std::accumulate(s.begin(), s.end(), 0.0);
        std::size_t h = s.size() / 2;
        return self(self, s.subspan(0, h)) + self(self, s.subspan(h));
    };
    e.mean = pairwise(pairwise, v) / double(v.size());
    if (v.size() > 1) {
        std::vector<double> dev(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) dev[i] = (v[i] - e.mean) * (v[i] - e.mean);
        double var = pairwise(pairwise, dev) / double(v.size() - 1);
        e.stderr_ = std::sqrt(var / double(v.size()));
    }
    return e;
}

/// c^{(1)} from the Gaussian covariance: -3 Var((G - G_{1/2}) * xi_kappa).
inline double exact_c1(const KernelFamily& kf, double kappa) {
    const TorusGrid& g = kf.grid();
    auto small = kf.small_scale_green(kf.scales().half);
    auto moll = mollifier(g, kappa, kf.sigma());
    std::vector<cplx> m(g.modes());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = small.multiplier()[i] * moll.multiplier()[i];
    return -3.0 * white_noise_variance(g, m);
}

/// Same constant without a prebuilt family; cheap on fine grids.
inline double exact_c1(const TorusGrid& g, double sigma, double kappa, const ChiSpec& chi = {}) {
    GridKernel G = green_kernel(g, sigma);
    Field small = G.density();
    small -= cutoff_green(G.density(), sigma, 0.5, chi);
    auto sk = GridKernel::from_density(std::move(small));
    auto moll = mollifier(g, kappa, sigma);
    std::vector<cplx> m(g.modes());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = sk.multiplier()[i] * moll.multiplier()[i];
    return -3.0 * white_noise_variance(g, m);
}

/// DPD counterterm -3 Var(G * xi_kappa).
inline double exact_dpd_c1(const TorusGrid& g, double sigma, double kappa) {
    auto G = green_kernel(g, sigma);
    auto moll = mollifier(g, kappa, sigma);
    std::vector<cplx> m(g.modes());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = G.multiplier()[i] * moll.multiplier()[i];
    return -3.0 * white_noise_variance(g, m);
}

/// Spatial mean of I F^{i,1} = <F^{i,1}(x; .), 1>.
inline double mass_of(const CoeffRep& F) {
    Field one(F.grid(), 1.0);
    Field v = tensor_contract(F, {&one});
    return v.integral() / std::pow(2.0 * std::numbers::pi, F.grid().d());
}

/// Coefficients of one realization up to mu = 1/2 at a given order.
inline CoeffSet flow_to_half(const Field& xi_kappa, std::span<const double> c, int order, const KernelFamily& kf,
                             const FlowOptions& opt = {}) {
    std::vector<double> cc(c.begin(), c.begin() + std::min<std::size_t>(c.size(), std::size_t(order)));
    CoeffSet F = init_coeffs(xi_kappa, cc, order);
    for (std::size_t l = 0; l < kf.scales().half; ++l) F = flow_advance(F, l, kf, opt);
    return F;
}

struct EnsembleContext {
    const KernelFamily& kf;
    const PowerCounting& pc;
    double kappa;
    EnsembleSpec ensemble;
    unsigned workers = 1;
    bool antithetic = true;
};

/// Mollified noise of member k; antithetic members reuse the seed of their pair with flipped sign.
inline Field member_noise(const EnsembleContext& ctx, std::size_t k) {
    std::size_t base = ctx.antithetic ? k / 2 : k;
    NoiseRealization xi(ctx.kf.grid(), ctx.ensemble.member_seed(base));
    Field f = xi.mollified(ctx.kappa, ctx.kf.sigma());
    if (ctx.antithetic && (k % 2 == 1)) f *= -1.0;
    return f;
}

/// Per-sample estimates of I F^{i,1}_{1/2}; antithetic pairs are averaged into one sample.
inline std::vector<double> mass_samples(const EnsembleContext& ctx, std::span<const double> c, int i) {
    std::size_t M = ctx.ensemble.count;
    std::vector<double> raw(M);
    parallel_for(M, ctx.workers, [&](std::size_t k) {
        Field xk = member_noise(ctx, k);
        CoeffSet F = flow_to_half(xk, c, i, ctx.kf);
        raw[k] = mass_of(F.at(i, 1));
    });
    if (!ctx.antithetic) return raw;
    std::vector<double> pairs;
    for (std::size_t k = 0; k + 1 < M; k += 2) pairs.push_back(0.5 * (raw[k] + raw[k + 1]));
    return pairs;
}

/// Order-by-order Monte-Carlo counterterms from the renormalization condition
/// I E F^{i,1}_{kappa,1/2} = 0.
inline CountertermSchedule compute_counterterms(const EnsembleContext& ctx) {
    CountertermSchedule s;
    s.kappa = ctx.kappa;
    s.method = "monte-carlo";
    s.samples = ctx.ensemble.count;
    s.flags = ctx.pc.flags;
    for (int i = 1; i <= ctx.pc.i_sharp; ++i) {
        std::vector<double> c = s.values;
        c.push_back(0.0);
        auto samples = mass_samples(ctx, c, i);
        auto e = mean_estimate(samples);
        s.values.push_back(-e.mean);
        s.stderrs.push_back(e.stderr_);
    }
    return s;
}

inline CountertermSchedule exact_counterterms(const KernelFamily& kf, const PowerCounting& pc, double kappa) {
    if (pc.i_sharp > 1) throw std::invalid_argument("exact counterterms cover order one only");
    CountertermSchedule s;
    s.kappa = kappa;
    s.method = "exact-gaussian";
    s.values = {exact_c1(kf, kappa)};
    s.stderrs = {0.0};
    s.flags = pc.flags;
    return s;
}

/// Renormalization condition check: per order, mean and stderr of I F^{i,1}_{1/2}.
inline std::vector<MeanEstimate> renormalization_residuals(const EnsembleContext& ctx, std::span<const double> c) {
    std::vector<MeanEstimate> out;
    for (int i = 1; i <= ctx.pc.i_sharp; ++i) out.push_back(mean_estimate(mass_samples(ctx, c, i)));
    return out;
}

// ---------------------------------------------------------------------------
// Cumulants (n = 2).

struct CumulantIndex {
    int i = 0;
    int m = 0;
};

struct CumulantEstimate {
    std::vector<CumulantIndex> index;
    std::vector<double> kernel;
    double norm = 0.0;
    /// h^d sum of per-entry standard errors; bounds the sampling error of `norm`.
    double norm_stderr = 0.0;
    std::size_t samples = 0;
};

/// Unbiased pair covariance of two smoothed coefficient samples. For one-leg
/// entries the first anchor is pinned at the origin (translation invariance).
/// Each sample is the smoothed kernel with all of its variables flattened.
inline CumulantEstimate empirical_cumulants(const std::vector<std::vector<double>>& a,
                                            const std::vector<std::vector<double>>& b, CumulantIndex ia,
                                            CumulantIndex ib, const TorusGrid& g) {
    if (ia.m > 1 || ib.m > 1) throw std::invalid_argument("cumulants: unsupported index shape");
    if (a.size() != b.size() || a.size() < 16) throw std::invalid_argument("cumulants: need at least 16 samples");
    const std::size_t M = a.size(), N = g.sites();
    const std::size_t na = a[0].size(), nb = b[0].size();
    CumulantEstimate e;
    e.index = {ia, ib};
    e.samples = M;
    std::vector<double> ma(na, 0.0), mb(nb, 0.0);
    for (std::size_t k = 0; k < M; ++k) {
        for (std::size_t p = 0; p < na; ++p) ma[p] += a[k][p];
        for (std::size_t p = 0; p < nb; ++p) mb[p] += b[k][p];
    }
    for (double& v : ma) v /= double(M);
    for (double& v : mb) v /= double(M);
    if (ia.m == 0 && ib.m == 0) {
        // translation-averaged c(r) = E (a(x) - Ea)(b(x + r) - Eb)
        e.kernel.assign(N, 0.0);
        std::vector<double> sq(N, 0.0);
        for (std::size_t k = 0; k < M; ++k) {
            Field da(g), db(g);
            for (std::size_t s = 0; s < N; ++s) {
                da[s] = a[k][s] - ma[s];
                db[s] = b[k][s] - mb[s];
            }
            auto fa = Spectral::of(g).forward(da.values());
            auto fb = Spectral::of(g).forward(db.values());
            for (std::size_t q = 0; q < fa.size(); ++q) fa[q] = std::conj(fa[q]) * fb[q];
            auto cc = Spectral::of(g).inverse(fa);
            for (std::size_t r = 0; r < N; ++r) {
                e.kernel[r] += cc[r];
                sq[r] += (cc[r] / double(N)) * (cc[r] / double(N));
            }
        }
        double s = 0.0, se = 0.0;
        for (std::size_t r = 0; r < N; ++r) {
            double mean = e.kernel[r] / double(M * N);
            double var = std::max(0.0, (sq[r] - double(M) * mean * mean) / double(M - 1));
            se += std::sqrt(var / double(M));
            e.kernel[r] /= double(M - 1) * double(N);
            s += std::abs(e.kernel[r]);
        }
        e.norm = s * g.cell();
        e.norm_stderr = se * g.cell();
        return e;
    }
    // pinned first anchor: rows over the remaining coordinates
    std::size_t ra = ia.m == 0 ? 1 : N;  // a: anchor 0 and its leg
    std::vector<double> ker(ra * nb, 0.0), sq(ra * nb, 0.0);
    for (std::size_t k = 0; k < M; ++k)
        for (std::size_t p = 0; p < ra; ++p) {
            double da = a[k][p] - ma[p];
            for (std::size_t q = 0; q < nb; ++q) {
                double v = da * (b[k][q] - mb[q]);
                ker[p * nb + q] += v;
                sq[p * nb + q] += v * v;
            }
        }
    double s = 0.0, se = 0.0;
    for (std::size_t j = 0; j < ker.size(); ++j) {
        double mean = ker[j] / double(M);
        se += std::sqrt(std::max(0.0, (sq[j] - double(M) * mean * mean) / double(M - 1)) / double(M));
        ker[j] /= double(M - 1);
        s += std::abs(ker[j]);
    }
    double vol = std::pow(g.cell(), double(ia.m + 1 + ib.m));
    e.norm = s * vol;
    e.norm_stderr = se * vol;
    e.kernel = std::move(ker);
    return e;
}

/// Third k-statistic of a scalar sample.
inline double k_statistic3(std::span<const double> x) {
    const double n = double(x.size());
    double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double s3 = 0.0;
    for (double v : x) s3 += (v - m) * (v - m) * (v - m);
    return n * s3 / ((n - 1.0) * (n - 2.0));
}

// ---------------------------------------------------------------------------
// Scaling fits.

inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    double pos = q * double(v.size() - 1);
    std::size_t lo = std::size_t(std::floor(pos));
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double t = pos - double(lo);
    return v[lo] * (1.0 - t) + v[hi] * t;
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};

/// Least-squares fit of log y against log x.
inline LineFit loglog_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit: empty window");
    double n = double(x.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    LineFit f;
    f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    f.intercept = (sy - f.slope * sx) / n;
    return f;
}

struct ScalingRow {
    double scale = 0.0;
    double median = 0.0, q25 = 0.0, q75 = 0.0;
};

struct ScalingTarget {
    int i = 0, m = 0;
    double rho = 0.0;
    std::vector<ScalingRow> rows;
    LineFit fit;
    bool pass = false;
};

struct ScalingReport {
    std::vector<ScalingTarget> targets;
    double window_lo = 0.0, window_hi = 0.5;
    double tolerance = 0.15;
};

/// Node indices of the scale grid inside [lo, hi].
inline std::vector<std::size_t> window_nodes(const ScaleGrid& sg, double lo, double hi) {
    std::vector<std::size_t> out;
    for (std::size_t l = 1; l < sg.size(); ++l)
        if (sg.nodes[l] >= lo * (1 - 1e-12) && sg.nodes[l] <= hi * (1 + 1e-12)) out.push_back(l);
    return out;
}

/// Ensemble medians of ||K_mu^{(1+m)} * F^{i,m}||_{V^m} across a window and fitted slopes against [mu].
inline ScalingReport scaling_report(const EnsembleContext& ctx, std::span<const double> c,
                                    const std::vector<std::pair<int, int>>& targets, double lo, double hi,
                                    double tol = 0.15) {
    const auto& kf = ctx.kf;
    auto win = window_nodes(kf.scales(), lo, hi);
    if (win.size() < 2) throw std::invalid_argument("scaling report: empty window");
    const std::size_t M = ctx.ensemble.count;
    std::vector<std::vector<std::vector<double>>> norms(
        targets.size(), std::vector<std::vector<double>>(win.size(), std::vector<double>(M)));
    const int order = ctx.pc.i_flat;
    parallel_for(M, ctx.workers, [&](std::size_t k) {
        Field xk = member_noise(ctx, k);
        std::vector<double> cc(c.begin(), c.end());
        CoeffSet F = init_coeffs(xk, cc, order);
        std::size_t w = 0;
        for (std::size_t l = 0; l < kf.scales().half && w < win.size(); ++l) {
            F = flow_advance(F, l, kf);
            while (w < win.size() && win[w] == l + 1) {
                for (std::size_t t = 0; t < targets.size(); ++t)
                    norms[t][w][k] = smoothed_vm_norm(F.at(targets[t].first, targets[t].second), kf.K_node(l + 1));
                ++w;
            }
        }
    });
    ScalingReport rep;
    rep.window_lo = lo;
    rep.window_hi = hi;
    rep.tolerance = tol;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        ScalingTarget st;
        st.i = targets[t].first;
        st.m = targets[t].second;
        st.rho = ctx.pc.rho(st.i, st.m);
        std::vector<double> xs, ys;
        for (std::size_t w = 0; w < win.size(); ++w) {
            ScalingRow r;
            r.scale = kf.scales().nodes[win[w]];
            r.median = quantile(norms[t][w], 0.5);
            r.q25 = quantile(norms[t][w], 0.25);
            r.q75 = quantile(norms[t][w], 0.75);
            st.rows.push_back(r);
            xs.push_back(kf.length(r.scale));
            ys.push_back(std::max(r.median, 1e-300));
        }
        st.fit = loglog_fit(xs, ys);
        st.pass = st.fit.slope >= st.rho - tol;
        rep.targets.push_back(std::move(st));
    }
    return rep;
}

}  // namespace rgflow

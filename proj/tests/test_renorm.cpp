#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <rgflow/renorm.hpp>

#include "oracles.hpp"

using namespace rgflow;

namespace {

constexpr double pi = std::numbers::pi;

// Translation-invariant one-leg kernel V(x; y) = v(y - x).
CoeffRep one_leg_kernel(const Field& v) {
    const TorusGrid& g = v.grid();
    DenseCoeffTensor T(g, 1);
    for (std::size_t x = 0; x < g.sites(); ++x)
        for (std::size_t y = 0; y < g.sites(); ++y) {
            std::size_t ys[1] = {y};
            T.at(x, ys) = v[g.diff(y, x)];
        }
    return CoeffRep(std::move(T));
}

Field gaussian_profile(const TorusGrid& g, double width) {
    Field v(g);
    for (std::size_t s = 0; s < g.sites(); ++s) {
        double r = g.radius(s);
        v[s] = std::exp(-r * r / (2.0 * width * width));
    }
    return v;
}

Field smooth_test_field(const TorusGrid& g) {
    Field f(g);
    for (std::size_t s = 0; s < g.sites(); ++s) f[s] = std::cos(g.coord(s, 0)) + 0.5 * std::sin(2.0 * g.coord(s, 0));
    return f;
}

Field smooth_test_second_derivative(const TorusGrid& g) {
    Field f(g);
    for (std::size_t s = 0; s < g.sites(); ++s)
        f[s] = -std::cos(g.coord(s, 0)) - 2.0 * std::sin(2.0 * g.coord(s, 0));
    return f;
}

}  // namespace

TEST(PowerCounting, ReferenceTable) {
    auto pc = power_counting(1, 0.4);
    EXPECT_NEAR(pc.alpha, -0.1, 1e-15);
    EXPECT_NEAR(pc.gamma, 0.2, 1e-15);
    EXPECT_NEAR(pc.rho(0, 0), -0.5, 1e-15);
    EXPECT_NEAR(pc.rho(1, 0), -0.3, 1e-15);
    EXPECT_NEAR(pc.rho(2, 0), -0.1, 1e-15);
    EXPECT_NEAR(pc.rho(3, 0), 0.1, 1e-15);
    EXPECT_NEAR(pc.rho(1, 3), 0.0, 1e-15);
    EXPECT_NEAR(pc.rho(2, 1), 0.0, 1e-15);
    EXPECT_EQ(pc.i_flat, 2);
    EXPECT_EQ(pc.i_sharp, 2);
    EXPECT_TRUE(pc.relevant(2, 1));
    ASSERT_EQ(pc.flags.size(), 1u);
    EXPECT_NE(pc.flags[0].find("rho(2,1)"), std::string::npos);
}

TEST(PowerCounting, ShallowRegime) {
    auto pc = power_counting(1, 0.45);
    EXPECT_EQ(pc.i_flat, 1);
    EXPECT_EQ(pc.i_sharp, 1);
    EXPECT_TRUE(pc.flags.empty());
    EXPECT_NEAR(pc.beta(), pc.rho(2, 0), 0.0);
    EXPECT_GT(pc.beta(), 0.0);
}

TEST(PowerCounting, FiveDimensionalExample) {
    auto pc = power_counting(5, 2.0);
    EXPECT_NEAR(pc.rho(0, 0), -2.5, 1e-15);
    EXPECT_EQ(pc.i_sharp, 2);
    EXPECT_EQ(pc.i_flat, 2);
}

TEST(PowerCounting, NoiseCoefficientScalesLikeWhiteNoise) {
    for (int d : {1, 2, 3})
        for (double frac : {0.36, 0.42, 0.5}) EXPECT_NEAR(power_counting(d, frac * d).rho(0, 0), -d / 2.0, 1e-12);
}

TEST(PowerCounting, SupercriticalThrows) {
    EXPECT_THROW(power_counting(1, 0.3), SupercriticalError);
    EXPECT_THROW(power_counting(1, 1.0 / 3.0), SupercriticalError);
    try {
        power_counting(2, 0.5);
        FAIL();
    } catch (const SupercriticalError& e) {
        EXPECT_NE(std::string(e.what()).find("supercritical"), std::string::npos);
    }
}

TEST(PowerCounting, TableInvariants) {
    for (int d : {1, 2, 3})
        for (int k = 1; k <= 40; ++k) {
            double sigma = d / 3.0 + k * (d / 2.0 - d / 3.0) / 40.0;
            auto pc = power_counting(d, sigma);
            EXPECT_LE(pc.i_sharp, pc.i_flat);
            EXPECT_TRUE(pc.relevant(pc.i_flat, 0));
            EXPECT_FALSE(pc.relevant(pc.i_flat + 1, 0));
            EXPECT_TRUE(pc.relevant(pc.i_sharp, 1));
            EXPECT_FALSE(pc.relevant(pc.i_sharp + 1, 1));
            EXPECT_GT(pc.beta(), 0.0);
            for (int i = 0; i < 6; ++i)
                for (int m = 0; m < 4; ++m) {
                    EXPECT_NEAR(pc.rho(i + 1, m) - pc.rho(i, m), pc.gamma, 1e-12);
                    EXPECT_NEAR(pc.rho(i, m + 1) - pc.rho(i, m), -pc.alpha, 1e-12);
                }
        }
}

TEST(PowerCounting, SmallEpsIsAdmissible) {
    EXPECT_TRUE(eps_admissible(1, 0.45, 1e-3));
    EXPECT_TRUE(eps_admissible(1, 0.4, 1e-3));
    EXPECT_FALSE(eps_admissible(1, 0.45, 0.05));
}

TEST(TaylorSplit, IntegralPart) {
    TorusGrid g(1, 128);
    Field v = gaussian_profile(g, 0.2);
    auto t = taylor_split(one_leg_kernel(v), TaylorScheme::Lattice);
    EXPECT_NEAR(t.iv, v.integral(), 1e-14);
    EXPECT_NEAR(t.iv, std::sqrt(2.0 * pi) * 0.2, 1e-10);
}

TEST(TaylorSplit, LatticeSchemeReconstructsExactly) {
    TorusGrid g(1, 128);
    Field v = gaussian_profile(g, 0.2);
    CoeffRep V = one_leg_kernel(v);
    auto t = taylor_split(V, TaylorScheme::Lattice);
    Field psi = smooth_test_field(g), d2(g);
    const double h = g.h();
    for (int j = 0; j < g.n(); ++j)
        d2[g.index(j)] = (psi[g.index(j + 1)] - 2.0 * psi[g.index(j)] + psi[g.index(j - 1)]) / (h * h);
    Field want = tensor_contract(V, {&psi});
    Field got = taylor_reconstruct(t, psi, {d2});
    EXPECT_LT(sup_distance(got, want), 1e-12 * want.sup_norm());
}

TEST(TaylorSplit, QuadratureSchemeConvergesUnderRefinement) {
    std::vector<double> errs;
    for (int n : {64, 128, 256}) {
        TorusGrid g(1, n);
        Field v = gaussian_profile(g, 0.2);
        CoeffRep V = one_leg_kernel(v);
        auto t = taylor_split(V);
        Field psi = smooth_test_field(g);
        Field want = tensor_contract(V, {&psi});
        Field got = taylor_reconstruct(t, psi, {smooth_test_second_derivative(g)});
        errs.push_back(sup_distance(got, want) / want.sup_norm());
    }
    EXPECT_LT(errs[2], errs[0]);
    EXPECT_LT(errs[2], 2e-2);
}

TEST(TaylorSplit, RejectsNonInvariantAndOddKernels) {
    TorusGrid g(1, 32);
    Field v = gaussian_profile(g, 0.3);
    DenseCoeffTensor T = one_leg_kernel(v).densify();
    std::size_t ys[1] = {3};
    T.at(5, ys) += 1.0;
    EXPECT_THROW(taylor_split(CoeffRep(T)), std::invalid_argument);
    Field odd = v;
    odd[1] += 0.5;
    EXPECT_THROW(taylor_split(one_leg_kernel(odd)), std::invalid_argument);
    EXPECT_THROW(taylor_split(CoeffRep::delta(g, 2)), std::invalid_argument);
}

TEST(Statistics, MeanEstimate) {
    std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    auto e = mean_estimate(v);
    EXPECT_DOUBLE_EQ(e.mean, 2.5);
    EXPECT_NEAR(e.stderr_, std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 3.0 / 4.0), 1e-15);
    EXPECT_EQ(e.count, 4u);
}

TEST(Statistics, ThirdKStatistic) {
    std::vector<double> v{0.0, 0.0, 3.0};
    EXPECT_NEAR(k_statistic3(v), 9.0, 1e-12);
    std::vector<double> sym{-2.0, -1.0, 0.0, 1.0, 2.0};
    EXPECT_NEAR(k_statistic3(sym), 0.0, 1e-14);
    std::mt19937_64 rng(5);
    std::exponential_distribution<double> ex(1.0);
    std::vector<double> big(200000);
    for (double& x : big) x = ex(rng);
    EXPECT_NEAR(k_statistic3(big), 2.0, 0.15);
}

TEST(Statistics, QuantileAndLogLogFit) {
    std::vector<double> v{5.0, 1.0, 3.0, 2.0, 4.0};
    EXPECT_DOUBLE_EQ(quantile(v, 0.5), 3.0);
    EXPECT_DOUBLE_EQ(quantile(v, 0.25), 2.0);
    EXPECT_DOUBLE_EQ(quantile(v, 0.0), 1.0);
    std::vector<double> x{0.1, 0.2, 0.4}, y;
    for (double t : x) y.push_back(3.0 * t * t);
    auto f = loglog_fit(x, y);
    EXPECT_NEAR(f.slope, 2.0, 1e-12);
    EXPECT_NEAR(f.intercept, std::log(3.0), 1e-12);
}

TEST(Cumulants, TranslationAveragedCovariance) {
    TorusGrid g(1, 32);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd;
    const std::size_t M = 4000;
    std::vector<std::vector<double>> a(M, std::vector<double>(g.sites())), b = a;
    for (std::size_t k = 0; k < M; ++k)
        for (std::size_t s = 0; s < g.sites(); ++s) {
            a[k][s] = nd(rng);
            b[k][s] = 2.0 * a[k][s] + nd(rng);
        }
    auto e = empirical_cumulants(a, b, {0, 0}, {0, 0}, g);
    EXPECT_NEAR(e.kernel[0], 2.0, 5.0 * 2.0 / std::sqrt(double(M * g.sites())));
    for (std::size_t r = 1; r < g.sites(); ++r) EXPECT_NEAR(e.kernel[r], 0.0, 0.05);
    EXPECT_GT(e.norm_stderr, 0.0);
    EXPECT_LT(std::abs(e.norm - 2.0 * g.cell()), e.norm_stderr * 5.0 + 1e-3);
}

TEST(Cumulants, PinnedAnchorMatchesTranslationAverage) {
    TorusGrid g(1, 16);
    std::mt19937_64 rng(10);
    std::normal_distribution<double> nd;
    const std::size_t M = 20000, N = g.sites();
    std::vector<std::vector<double>> a(M, std::vector<double>(N)), b = a;
    for (std::size_t k = 0; k < M; ++k) {
        std::vector<double> w(N);
        for (double& x : w) x = nd(rng);
        for (std::size_t s = 0; s < N; ++s) {
            a[k][s] = w[s] + 0.5 * w[(s + 1) % N];
            b[k][s] = a[k][s];
        }
    }
    auto fft = empirical_cumulants(a, b, {0, 0}, {0, 0}, g);
    auto pinned = empirical_cumulants(a, b, {0, 0}, {1, 0}, g);
    ASSERT_EQ(pinned.kernel.size(), N);
    EXPECT_NEAR(fft.kernel[0], 1.25, 0.03);
    EXPECT_NEAR(fft.kernel[1], 0.5, 0.03);
    for (std::size_t q = 0; q < N; ++q) EXPECT_NEAR(pinned.kernel[q], fft.kernel[q], 0.06) << q;
    EXPECT_THROW(empirical_cumulants(a, b, {0, 2}, {0, 0}, g), std::invalid_argument);
}

TEST(Counterterms, ExactFirstOrderAgreesAcrossEntryPoints) {
    TorusGrid g(1, 64);
    KernelFamily kf(g, 0.45, ScaleGrid::geometric(0.1, 24));
    EXPECT_NEAR(exact_c1(kf, 0.8), exact_c1(g, 0.45, 0.8), 1e-12 * std::abs(exact_c1(g, 0.45, 0.8)));
    EXPECT_LT(exact_c1(g, 0.45, 0.8), 0.0);
}

TEST(Counterterms, ExactFirstOrderMatchesPointwiseVariance) {
    TorusGrid g(1, 64);
    KernelFamily kf(g, 0.45, ScaleGrid::geometric(0.1, 24));
    auto small = kf.small_scale_green(kf.scales().half);
    const std::size_t M = 20000;
    double acc = 0.0;
    for (std::size_t k = 0; k < M; ++k) {
        Field b = convolve(mollify(sample_noise(g, 1000 + k), 0.8, 0.45), small);
        acc += b[0] * b[0];
    }
    double var = acc / double(M);
    EXPECT_NEAR(-3.0 * var, exact_c1(kf, 0.8), 4.0 * std::sqrt(2.0 / double(M)) * 3.0 * var);
}

TEST(Counterterms, MonteCarloMatchesExactWithinThreeStderr) {
    TorusGrid g(1, 64);
    auto pc = power_counting(1, 0.45);
    KernelFamily kf(g, 0.45, ScaleGrid::geometric(0.1, 24));
    EnsembleContext ctx{kf, pc, 0.8, EnsembleSpec{7, 256}, 1, true};
    auto s = compute_counterterms(ctx);
    ASSERT_EQ(s.values.size(), 1u);
    double exact = exact_c1(kf, 0.8);
    EXPECT_LT(std::abs(s.values[0] - exact), 3.0 * s.stderrs[0]) << s.values[0] << " vs " << exact;

    EnsembleContext hold{kf, pc, 0.8, EnsembleSpec{99, 256}, 1, true};
    auto res = renormalization_residuals(hold, s.values);
    ASSERT_EQ(res.size(), 1u);
    EXPECT_LT(std::abs(res[0].mean), 4.0 * res[0].stderr_);
}

TEST(Counterterms, ZeroCountertermsLeaveMassBiased) {
    TorusGrid g(1, 64);
    auto pc = power_counting(1, 0.45);
    KernelFamily kf(g, 0.45, ScaleGrid::geometric(0.1, 24));
    EnsembleContext ctx{kf, pc, 0.8, EnsembleSpec{3, 128}, 1, true};
    auto res = renormalization_residuals(ctx, std::vector<double>{0.0});
    EXPECT_GT(std::abs(res[0].mean), 4.0 * res[0].stderr_);
}

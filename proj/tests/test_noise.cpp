#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include <rgflow/kernels.hpp>
#include <rgflow/noise.hpp>

using namespace rgflow;

TEST(Noise, SameSeedSameArray) {
    TorusGrid g(1, 64);
    NoiseRealization a(g, 42), b(g, 42), c(g, 43);
    EXPECT_EQ(a.values().values(), b.values().values());
    EXPECT_NE(a.values().values(), c.values().values());
}

TEST(Noise, MemberSeedsAreDistinctAndOrderFree) {
    EnsembleSpec e{7, 1000};
    std::set<std::uint64_t> seen;
    for (std::size_t i = 0; i < e.count; ++i) seen.insert(e.member_seed(i));
    EXPECT_EQ(seen.size(), e.count);
    EXPECT_EQ(e.member_seed(500), (EnsembleSpec{7, 3}.member_seed(500)));
}

TEST(Noise, PerSiteMomentsMatchWhiteNoise) {
    TorusGrid g(1, 32);
    const std::size_t M = 10000;
    EnsembleSpec e{2024, M};
    std::vector<double> sum(g.sites(), 0.0), sq(g.sites(), 0.0);
    for (std::size_t k = 0; k < M; ++k) {
        NoiseRealization xi(g, e.member_seed(k));
        for (std::size_t s = 0; s < g.sites(); ++s) {
            sum[s] += xi.values()[s];
            sq[s] += xi.values()[s] * xi.values()[s];
        }
    }
    const double target = 1.0 / g.cell();
    for (std::size_t s = 0; s < g.sites(); ++s) {
        double mean = sum[s] / M;
        double var = (sq[s] - M * mean * mean) / (M - 1);
        EXPECT_NEAR(var, target, 0.05 * target) << s;
        EXPECT_LT(std::abs(mean), 4.0 * std::sqrt(var / M)) << s;
    }
}

TEST(Mollify, IsLinear) {
    TorusGrid g(1, 64);
    auto m = mollifier(g, 0.8, 0.45);
    NoiseRealization a(g, 1), b(g, 2);
    Field mix = 2.0 * a.values() + (-0.5) * b.values();
    Field lhs = convolve(mix, m);
    Field rhs = 2.0 * a.mollified(0.8, 0.45) + (-0.5) * b.mollified(0.8, 0.45);
    EXPECT_LT(sup_distance(lhs, rhs), 1e-12 * rhs.sup_norm());
}

TEST(Mollify, VarianceMatchesFourierSum) {
    TorusGrid g(1, 64);
    const double kappa = 0.8, sigma = 0.45;
    auto m = mollifier(g, kappa, sigma);
    const double exact = white_noise_variance(g, m.multiplier());
    // direct form h^d sum theta^2 of the same kernel
    double direct = 0.0;
    for (double v : m.density().values()) direct += v * v;
    direct *= g.cell();
    EXPECT_NEAR(exact, direct, 1e-12 * direct);
    const std::size_t M = 4000;
    EnsembleSpec e{99, M};
    double acc = 0.0;
    for (std::size_t k = 0; k < M; ++k) {
        NoiseRealization xi(g, e.member_seed(k));
        const Field& f = xi.mollified(kappa, sigma);
        for (std::size_t s = 0; s < g.sites(); ++s) acc += f[s] * f[s];
    }
    double est = acc / double(M * g.sites());
    EXPECT_NEAR(est, exact, 0.05 * exact);
}

TEST(Mollify, ApproachesRawNoiseAsKernelNarrows) {
    TorusGrid g(1, 2048);
    NoiseRealization xi(g, 5);
    // compare on low modes, where the multiplier tends to one
    std::vector<double> lowpass(g.modes(), 0.0);
    for (std::size_t i = 0; i < 17; ++i) lowpass[i] = 1.0;
    Field ref = apply_symbol(xi.values(), lowpass);
    double prev = std::numeric_limits<double>::infinity();
    for (double kappa : {0.6, 0.4, 0.25}) {
        double err = sup_distance(apply_symbol(xi.mollified(kappa, 0.45), lowpass), ref);
        EXPECT_LT(err, prev);
        prev = err;
    }
    EXPECT_LT(prev, 0.02 * ref.sup_norm());
}

TEST(Noise, ReflectIsInvolution) {
    TorusGrid g(1, 16);
    NoiseRealization xi(g, 3);
    Field r = reflect(xi.values());
    EXPECT_EQ(r[1], xi.values()[15]);
    EXPECT_EQ(reflect(r).values(), xi.values().values());
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <rgflow/grid.hpp>
#include <rgflow/tensor.hpp>

using namespace rgflow;

namespace {

Field random_field(const TorusGrid& g, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Field f(g);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = nd(rng);
    return f;
}

// (k * a)(x) = h^d sum_y k(x - y) a(y), summed directly
Field direct_convolution(const Field& a, const Field& k) {
    const TorusGrid& g = a.grid();
    Field out(g);
    for (std::size_t x = 0; x < g.sites(); ++x) {
        double s = 0.0;
        for (std::size_t y = 0; y < g.sites(); ++y) s += k[g.diff(x, y)] * a[y];
        out[x] = s * g.cell();
    }
    return out;
}

}  // namespace

TEST(TorusGrid, RejectsBadShapes) {
    EXPECT_THROW(TorusGrid(3, 16), GridError);
    EXPECT_THROW(TorusGrid(1, 12), GridError);
    EXPECT_THROW(TorusGrid(1, 4), GridError);
}

TEST(TorusGrid, PeriodicDifferenceAndNegation) {
    TorusGrid g(2, 8);
    for (std::size_t x = 0; x < g.sites(); x += 5)
        for (std::size_t y = 0; y < g.sites(); y += 3) {
            std::size_t d = g.diff(x, y);
            EXPECT_EQ(g.diff(x, y), g.neg(g.diff(y, x)));
            EXPECT_NEAR(g.radius(d), g.distance(x, y), 0.0);
        }
    EXPECT_DOUBLE_EQ(g.radius(g.index(4, 0)), M_PI);
}

TEST(Convolve, DeltaIsIdentity) {
    TorusGrid g(1, 32);
    Field a = random_field(g, 1);
    Field c = convolve(a, GridKernel::delta(g));
    EXPECT_LT(sup_distance(a, c), 1e-13);
    EXPECT_NEAR(GridKernel::delta(g).density()[0], 1.0 / g.cell(), 1e-9);
}

TEST(Convolve, ConstantFieldPicksUpMass) {
    TorusGrid g(1, 32);
    Field k = random_field(g, 2);
    Field c = convolve(Field(g, 2.5), GridKernel::from_density(k));
    double mass = k.integral();
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], 2.5 * mass, 1e-12);
}

TEST(Convolve, MatchesDirectQuadrature) {
    for (int d : {1, 2}) {
        TorusGrid g(d, 16);
        Field a = random_field(g, 3), k = random_field(g, 4);
        Field fast = convolve(a, GridKernel::from_density(k));
        Field slow = direct_convolution(a, k);
        EXPECT_LT(sup_distance(fast, slow), 1e-10 * slow.sup_norm()) << "d=" << d;
    }
}

TEST(Convolve, CompositionIsAssociative) {
    TorusGrid g(1, 16);
    auto k1 = GridKernel::from_density(random_field(g, 5));
    auto k2 = GridKernel::from_density(random_field(g, 6));
    Field a = random_field(g, 7);
    Field lhs = convolve(a, compose(k1, k2));
    Field rhs = convolve(convolve(a, k2), k1);
    EXPECT_LT(sup_distance(lhs, rhs), 1e-11 * rhs.sup_norm());
}

TEST(Field, NanPropagatesThroughSupNorm) {
    TorusGrid g(1, 8);
    Field a(g, 1.0);
    a[3] = std::nan("");
    EXPECT_TRUE(std::isnan(a.sup_norm()));
    EXPECT_TRUE(std::isnan(sup_distance(a, Field(g))));
}

TEST(TensorContract, TripleDeltaGivesCube) {
    TorusGrid g(1, 16);
    Field phi = random_field(g, 8);
    Field out = contract_power(CoeffRep::delta(g, 3), phi);
    for (std::size_t i = 0; i < g.sites(); ++i) EXPECT_NEAR(out[i], phi[i] * phi[i] * phi[i], 1e-12);
}

TEST(TensorContract, ScaledDeltaIsMultiplication) {
    TorusGrid g(1, 16);
    Field phi = random_field(g, 9);
    Field out = tensor_contract(CoeffRep::delta(g, 1, -1.75), {&phi});
    for (std::size_t i = 0; i < g.sites(); ++i) EXPECT_NEAR(out[i], -1.75 * phi[i], 1e-13);
}

TEST(TensorContract, DenseMatchesNestedSum) {
    TorusGrid g(1, 16);
    const std::size_t N = g.sites();
    DenseCoeffTensor T(g, 2);
    std::mt19937_64 rng(10);
    std::normal_distribution<double> nd;
    for (double& v : T.data()) v = nd(rng);
    Field a = random_field(g, 11), b = random_field(g, 12);
    Field fast = tensor_contract(CoeffRep(T), {&a, &b});
    const double h = g.cell();
    for (std::size_t x = 0; x < N; ++x) {
        double s = 0.0;
        for (std::size_t y1 = 0; y1 < N; ++y1)
            for (std::size_t y2 = 0; y2 < N; ++y2) {
                std::size_t ys[2] = {y1, y2};
                s += T.at(x, ys) * a[y1] * b[y2];
            }
        EXPECT_NEAR(fast[x], s * h * h, 1e-10 * std::max(1.0, std::abs(s * h * h)));
    }
}

TEST(TensorContract, FactoredAndDenseAgree) {
    TorusGrid g(1, 16);
    Field p = random_field(g, 13), phi = random_field(g, 14), psi = random_field(g, 15);
    CoeffRep F = CoeffRep::local(p, 2);
    CoeffRep D(F.densify());
    EXPECT_LT(sup_distance(tensor_contract(F, {&phi, &psi}), tensor_contract(D, {&phi, &psi})), 1e-10);
}

TEST(VmNorm, DeltaHasUnitNorm) {
    TorusGrid g(1, 16);
    EXPECT_NEAR(vm_norm(CoeffRep::delta(g, 1)), 1.0, 1e-14);
    EXPECT_NEAR(vm_norm(CoeffRep::delta(g, 1, -3.5)), 3.5, 1e-14);
}

TEST(VmNorm, DenseMatchesRowSumMaximum) {
    TorusGrid g(1, 16);
    DenseCoeffTensor T(g, 1);
    std::mt19937_64 rng(16);
    std::normal_distribution<double> nd;
    for (double& v : T.data()) v = nd(rng);
    double best = 0.0;
    for (std::size_t x = 0; x < g.sites(); ++x) {
        double s = 0.0;
        for (std::size_t y = 0; y < g.sites(); ++y) {
            std::size_t ys[1] = {y};
            s += std::abs(T.at(x, ys));
        }
        best = std::max(best, s * g.cell());
    }
    EXPECT_NEAR(vm_norm(CoeffRep(T)), best, 1e-12 * best);
}

TEST(DenseTensor, MemoryCapRefusesAllocation) {
    TorusGrid g(1, 64);
    DensePolicy tight;
    tight.max_values = 1000;
    EXPECT_THROW(DenseCoeffTensor(g, 2, tight), RepresentationError);
    EXPECT_THROW(DenseCoeffTensor(g, 4), RepresentationError);
}

TEST(SupportRadius, DeltaHasZeroRadius) {
    TorusGrid g(1, 32);
    EXPECT_DOUBLE_EQ(support_radius(CoeffRep::delta(g, 1)), 0.0);
}

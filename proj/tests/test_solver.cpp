#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <rgflow/renorm.hpp>
#include <rgflow/solver.hpp>

using namespace rgflow;

namespace {

struct Problem {
    TorusGrid g{1, 64};
    double sigma, kappa;
    PowerCounting pc;
    KernelFamily kf;
    Field xi;
    std::vector<double> c;
    FlowHistory hist;

    Problem(double sigma_, double kappa_, int points = 48, std::uint64_t seed = 5)
        : sigma(sigma_),
          kappa(kappa_),
          pc(power_counting(1, sigma_)),
          kf(g, sigma_, ScaleGrid::geometric(kappa_ / 8.0, points)),
          xi(mollify(sample_noise(g, seed), kappa_, sigma_)),
          c(counterterms()),
          hist(xi, c, pc.i_flat, kf) {}

    std::vector<double> counterterms() const {
        std::vector<double> v(std::size_t(pc.i_flat), 0.0);
        v[0] = exact_c1(g, sigma, kappa);
        return v;
    }

    SolverConfig config(double lambda) const {
        SolverConfig cfg;
        cfg.lambda = lambda;
        cfg.alpha = pc.alpha;
        cfg.beta = pc.beta();
        cfg.m_flat = max_legs(pc.i_flat);
        cfg.override_lambda = true;
        return cfg;
    }

    double rel(const Field& a, const Field& b) const { return sup_distance(a, b) / b.sup_norm(); }
};

}  // namespace

TEST(Solver, LinearCaseTelescopes) {
    Problem s(0.45, 0.75);
    auto sol = solve_effective(s.hist, s.kf, s.config(0.0));
    EXPECT_LE(sol.iterations, 2);
    Field phi = reconstruct_phi(sol, s.hist, s.kf, 0.0);
    Field want = convolve(s.xi, s.kf.G());
    EXPECT_LT(s.rel(phi, want), 1e-12);
    EXPECT_LT(equation_residual(phi, s.xi, 0.0, s.c, s.kf.G()), 1e-12);
}

TEST(Solver, ContractsAndSolvesEquation) {
    Problem s(0.45, 0.75);
    auto sol = solve_effective(s.hist, s.kf, s.config(0.01));
    EXPECT_TRUE(sol.converged);
    EXPECT_LE(sol.iterations, 40);
    for (double r : sol.ratios) EXPECT_LE(r, 0.55);
    Field phi = reconstruct_phi(sol, s.hist, s.kf, 0.01);
    EXPECT_LE(equation_residual(phi, s.xi, 0.01, s.c, s.kf.G()), 5e-3);
    auto pic = direct_picard(s.xi, 0.01, s.c, s.kf.G());
    EXPECT_LE(s.rel(phi, pic.phi), 5e-3);
}

TEST(Solver, ExtraIterationsDoNotMoveFixedPoint) {
    Problem s(0.45, 0.75);
    auto cfg = s.config(0.01);
    auto sol = solve_effective(s.hist, s.kf, cfg);
    cfg.max_iter = 2 * sol.iterations;
    cfg.tol = 1e-15;
    EffectiveSolution more;
    try {
        more = solve_effective(s.hist, s.kf, cfg, sol.state);
    } catch (const ConvergenceError&) {
        GTEST_SKIP() << "roundoff floor above 1e-15";
    }
    EXPECT_LT(ball_distance(more.state, sol.state, s.kf, cfg), 1e-10);
}

TEST(Solver, DeepRegimeResidualAndRefinement) {
    std::vector<double> gaps;
    for (int points : {24, 48}) {
        Problem s(0.40, 0.75, points);
        auto sol = solve_effective(s.hist, s.kf, s.config(0.01));
        Field phi = reconstruct_phi(sol, s.hist, s.kf, 0.01);
        auto pic = direct_picard(s.xi, 0.01, s.c, s.kf.G());
        gaps.push_back(s.rel(phi, pic.phi));
        if (points == 48) {
            EXPECT_LE(equation_residual(phi, s.xi, 0.01, s.c, s.kf.G()), 5e-3);
        }
    }
    EXPECT_LE(gaps[1], 5e-3);
    EXPECT_LT(gaps[1], gaps[0]);
}

TEST(Solver, LargeCouplingDivergenceIsReported) {
    Problem s(0.40, 0.75);
    EXPECT_THROW(solve_effective(s.hist, s.kf, s.config(0.5)), ConvergenceError);
    EXPECT_THROW(direct_picard(s.xi, 5.0, s.c, s.kf.G()), ConvergenceError);
}

TEST(Dpd, AgreesWithPicardInShallowRegime) {
    Problem s(0.45, 0.75);
    for (double lambda : {0.0, 0.01}) {
        auto pic = direct_picard(s.xi, lambda, s.c, s.kf.G());
        auto dpd = dpd_solve(s.xi, lambda, s.kf.G(), s.sigma, s.c[0]);
        EXPECT_LT(s.rel(dpd.phi, pic.phi), 1e-4);
    }
}

TEST(Dpd, RefusesDeepRegime) {
    Problem s(0.40, 0.75);
    EXPECT_THROW(dpd_solve(s.xi, 0.01, s.kf.G(), 0.40, s.c[0]), std::invalid_argument);
}

TEST(Ball, CalibratedRadiusGivesContraction) {
    Problem s(0.45, 0.75);
    double bound = coefficient_bound(s.hist, s.kf, s.pc);
    auto cal = calibrate_radius(bound, s.kf.c_g(), s.sigma, s.pc.alpha, s.pc.beta());
    EXPECT_GE(cal.R, 1.0);
    EXPECT_GE(cal.R, cal.coefficient_bound);
    EXPECT_GE(cal.R, cal.lemma_bound);

    auto cfg = s.config(0.0);
    cfg.R = cal.R;
    cfg.lambda = cfg.lambda_star();
    cfg.override_lambda = false;
    EXPECT_NO_THROW(cfg.validate());

    const std::size_t L = s.kf.scales().size();
    SolverState x = SolverState::zero(s.g, L), y = x;
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t p = 0; p < s.g.sites(); ++p) {
            y.phi[l][p] = 0.1 * std::sin(double(p + l));
            y.zeta[l][p] = 0.1 * std::cos(double(3 * p + l)) / cal.R;
        }
    }
    auto qx = q_apply(x, s.hist, s.kf, cfg), qy = q_apply(y, s.hist, s.kf, cfg);
    EXPECT_LE(ball_distance(qx, qy, s.kf, cfg), 0.5 * ball_distance(x, y, s.kf, cfg));
    EXPECT_LE(ball_norm(qx, s.kf, cfg), cal.R);
}

TEST(Ball, CriticalCouplingShrinksWithRadius) {
    SolverConfig a, b;
    a.R = 1.0;
    b.R = 2.0;
    EXPECT_DOUBLE_EQ(a.lambda_star(), 1.0 / 8.0);
    EXPECT_LT(b.lambda_star(), a.lambda_star());
    a.lambda = 0.2;
    EXPECT_THROW(a.validate(), std::invalid_argument);
    a.override_lambda = true;
    EXPECT_NO_THROW(a.validate());
    a.R = 0.5;
    EXPECT_THROW(a.validate(), std::invalid_argument);
}

TEST(Ball, NormIsZeroOnlyAtZero) {
    Problem s(0.45, 0.75, 24);
    auto cfg = s.config(0.0);
    const std::size_t L = s.kf.scales().size();
    SolverState x = SolverState::zero(s.g, L);
    EXPECT_EQ(ball_norm(x, s.kf, cfg), 0.0);
    x.phi[3][7] = 1.0;
    EXPECT_GT(ball_norm(x, s.kf, cfg), 0.0);
}

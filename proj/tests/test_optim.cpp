#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "nnmix/estimate.hpp"
#include "nnmix/optim.hpp"
#include "problems.hpp"

using namespace nnmix;

namespace {

// f(x) = -(x - a)' A (x - a) / 2 for a random SPD matrix A.
struct Quadratic {
    Eigen::MatrixXd a_mat;
    Eigen::VectorXd centre;

    double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& g) const {
        const Eigen::VectorXd r = x - centre;
        g = -(a_mat * r);
        return -0.5 * r.dot(a_mat * r);
    }
};

Quadratic random_quadratic(int n, double condition, std::mt19937_64& rng) {
    std::normal_distribution<double> z;
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m(i) = z(rng);
    }
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    const Eigen::MatrixXd q = qr.householderQ();
    const Eigen::VectorXd eig = Eigen::VectorXd::LinSpaced(n, 0.0, std::log(condition)).array().exp();
    Quadratic quad;
    quad.a_mat = q * eig.asDiagonal() * q.transpose();
    quad.centre.resize(n);
    for (int i = 0; i < n; ++i) {
        quad.centre(i) = z(rng);
    }
    return quad;
}

// Two bumps, global maximum 2 at x = 3 and local maximum 1 at x = -2.
double two_basins(double x) { return std::exp(-(x + 2.0) * (x + 2.0)) + 2.0 * std::exp(-(x - 3.0) * (x - 3.0)); }

double two_basins_grad(double x) {
    return -2.0 * (x + 2.0) * std::exp(-(x + 2.0) * (x + 2.0)) - 4.0 * (x - 3.0) * std::exp(-(x - 3.0) * (x - 3.0));
}

}  // namespace

TEST(Maximize, QuadraticBowlFromAnyStart) {
    const Eigen::Vector3d a(1.0, -2.0, 0.5);
    const ObjectiveFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = -2.0 * (x - a);
        return -(x - a).squaredNorm();
    };
    OptimizerConfig cfg;
    cfg.grad_tol = 1e-12;
    std::mt19937_64 rng(1);
    std::normal_distribution<double> z(0.0, 10.0);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Vector3d x0(z(rng), z(rng), z(rng));
        const OptimResult r = maximize(f, x0, cfg);
        EXPECT_TRUE(r.converged);
        EXPECT_LE((r.x_best - a).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Maximize, IllConditionedQuadraticHasMonotoneTrace) {
    const ObjectiveFn f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = Eigen::Vector2d(-2.0 * x(0), -20.0 * x(1));
        return -(x(0) * x(0) + 10.0 * x(1) * x(1));
    };
    OptimizerConfig cfg;
    cfg.grad_tol = 1e-10;
    const OptimResult r = maximize(f, Eigen::Vector2d(3.0, -1.5), cfg);
    EXPECT_TRUE(r.converged);
    ASSERT_GE(r.trace.size(), 2u);
    for (std::size_t i = 1; i < r.trace.size(); ++i) {
        EXPECT_GE(r.trace[i], r.trace[i - 1]);
    }
    EXPECT_LE(r.x_best.norm(), 1e-9);
}

TEST(Maximize, ConvexQuadraticWithinDimensionPlusFiveIterations) {
    std::mt19937_64 rng(2);
    for (int n : {2, 5, 10, 20}) {
        const Quadratic quad = random_quadratic(n, 100.0, rng);
        OptimizerConfig cfg;
        cfg.grad_tol = 1e-10;
        cfg.restart_every = 0;
        cfg.line_search.c2 = 1e-3;
        const ObjectiveFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return quad(x, g); };
        const OptimResult r = maximize(f, Eigen::VectorXd::Zero(n), cfg);
        EXPECT_TRUE(r.converged) << "n=" << n << " " << r.message;
        EXPECT_LE(r.iterations, n + 5) << "n=" << n;
        Eigen::VectorXd g;
        quad(r.x_best, g);
        EXPECT_LE(g.cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Maximize, RosenbrockConverges) {
    const ObjectiveFn f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        const double a = 1.0 - x(0);
        const double b = x(1) - x(0) * x(0);
        g.resize(2);
        g(0) = -(-2.0 * a - 400.0 * x(0) * b);
        g(1) = -(200.0 * b);
        return -(a * a + 100.0 * b * b);
    };
    OptimizerConfig cfg;
    cfg.grad_tol = 1e-9;
    cfg.max_iters = 5000;
    const OptimResult r = maximize(f, Eigen::Vector2d(-1.2, 1.0), cfg);
    EXPECT_TRUE(r.converged) << r.message;
    EXPECT_NEAR(r.x_best(0), 1.0, 1e-6);
    EXPECT_NEAR(r.x_best(1), 1.0, 1e-6);
}

TEST(Maximize, ConvergesBelowTheObjectiveRoundingFloor) {
    // a large constant swamps value differences near the optimum; slopes stay exact
    const Eigen::Vector3d diag(1.0, 1e-2, 1e-4);
    const Eigen::Vector3d target(1.0, -2.0, 3.0);
    const ObjectiveFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        const Eigen::VectorXd r = x - target;
        g = -(diag.array() * r.array()).matrix();
        return 1e6 - 0.5 * r.dot(diag.asDiagonal() * r);
    };
    OptimizerConfig cfg;
    cfg.grad_tol = 1e-13;
    const OptimResult r = maximize(f, Eigen::VectorXd::Zero(3), cfg);
    EXPECT_TRUE(r.converged) << r.message;
    EXPECT_LT((r.x_best - target).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Maximize, NonFiniteObjectiveAbortsTheStart) {
    const ObjectiveFn f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = Eigen::VectorXd::Ones(1);
        if (x(0) > 0.5) {
            return std::numeric_limits<double>::quiet_NaN();
        }
        return x(0);
    };
    OptimizerConfig cfg;
    const OptimResult r = maximize(f, Eigen::VectorXd::Zero(1), cfg);
    EXPECT_FALSE(r.converged);
    EXPECT_TRUE(r.reason == StopReason::non_finite || r.reason == StopReason::line_search_failure);
    EXPECT_LE(r.x_best(0), 0.5);
    EXPECT_TRUE(std::isfinite(r.f_best));
    EXPECT_FALSE(r.per_start.front().failed);

    const ObjectiveFn bad_start = [](const Eigen::VectorXd&, Eigen::VectorXd& g) {
        g = Eigen::VectorXd::Zero(1);
        return std::numeric_limits<double>::infinity();
    };
    const OptimResult r2 = maximize(bad_start, Eigen::VectorXd::Zero(1), cfg);
    EXPECT_EQ(r2.reason, StopReason::non_finite);
    EXPECT_TRUE(r2.per_start.front().failed);
}

TEST(Maximize, UnboundedObjectiveDoesNotReportConvergence) {
    const ObjectiveFn f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = Eigen::VectorXd::Ones(1);
        return x(0);
    };
    OptimizerConfig cfg;
    cfg.max_iters = 50;
    const OptimResult r = maximize(f, Eigen::VectorXd::Zero(1), cfg);
    EXPECT_FALSE(r.converged);
}

TEST(MultiStart, SingleStartEqualsMaximize) {
    std::mt19937_64 rng(3);
    const Quadratic quad = random_quadratic(4, 10.0, rng);
    const ObjectiveFn f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return quad(x, g); };
    OptimizerConfig cfg;
    cfg.seed = 99;
    const InitSampler init = [](std::mt19937_64& r) {
        std::normal_distribution<double> z;
        return Eigen::Vector4d(z(r), z(r), z(r), z(r)).eval();
    };
    const OptimResult multi = multi_start(f, init, cfg);
    std::mt19937_64 replay(99);
    const OptimResult single = maximize(f, init(replay), cfg);
    EXPECT_EQ(multi.x_best, single.x_best);
    EXPECT_EQ(multi.f_best, single.f_best);
    EXPECT_EQ(multi.iterations, single.iterations);
}

TEST(MultiStart, FindsGlobalMaximumOfTwoBasins) {
    // grid oracle for the global maximum
    double grid_best = -1.0;
    for (int i = 0; i <= 200000; ++i) {
        grid_best = std::max(grid_best, two_basins(-10.0 + 20.0 * i / 200000.0));
    }
    const ObjectiveFn f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = Eigen::VectorXd::Constant(1, two_basins_grad(x(0)));
        return two_basins(x(0));
    };
    OptimizerConfig cfg;
    cfg.n_starts = 10;
    cfg.seed = 5;
    cfg.grad_tol = 1e-10;
    // starts spread evenly across both basins
    const InitSampler init = [](std::mt19937_64& r) {
        std::uniform_real_distribution<double> u(-4.0, 5.0);
        return Eigen::VectorXd::Constant(1, u(r));
    };
    const OptimResult r = multi_start(f, init, cfg);
    EXPECT_NEAR(r.f_best, grid_best, 1e-6);
    EXPECT_NEAR(r.x_best(0), 3.0, 1e-4);
    ASSERT_EQ(r.per_start.size(), 10u);
    double best = -1.0;
    for (const auto& s : r.per_start) {
        best = std::max(best, s.value);
    }
    EXPECT_EQ(r.f_best, best);
}

TEST(MultiStart, SameSeedSameResultAndThreadIndependent) {
    std::mt19937_64 rng(11);
    const NceProblem p = testing_problems::simulation_problem(512, 512, true, rng);
    OptimizerConfig cfg;
    cfg.n_starts = 4;
    cfg.seed = 17;
    const EstimationResult a = estimate_mixture(p, 2, cfg);
    const EstimationResult b = estimate_mixture(p, 2, cfg);
    EXPECT_EQ(a.theta, b.theta);
    EXPECT_EQ(a.c, b.c);
    EXPECT_EQ(a.objective, b.objective);
    cfg.threads = 3;
    const EstimationResult c = estimate_mixture(p, 2, cfg);
    EXPECT_EQ(a.theta, c.theta);
    EXPECT_EQ(a.c, c.c);
    ASSERT_EQ(a.starts.size(), c.starts.size());
    for (std::size_t s = 0; s < a.starts.size(); ++s) {
        EXPECT_EQ(a.starts[s].value, c.starts[s].value);
    }
}

TEST(MultiStart, AllStartsFailingThrowsWithDiagnostics) {
    const ObjectiveFn f = [](const Eigen::VectorXd&, Eigen::VectorXd& g) {
        g = Eigen::VectorXd::Zero(1);
        return std::numeric_limits<double>::quiet_NaN();
    };
    OptimizerConfig cfg;
    cfg.n_starts = 3;
    const InitSampler init = [](std::mt19937_64&) { return Eigen::VectorXd::Zero(1).eval(); };
    try {
        multi_start(f, init, cfg);
        FAIL() << "expected OptimizationError";
    } catch (const OptimizationError& e) {
        EXPECT_EQ(e.starts().size(), 3u);
        for (const auto& s : e.starts()) {
            EXPECT_TRUE(s.failed);
        }
    }
}

TEST(OptimizerConfig, ValidatesConstants) {
    OptimizerConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.line_search.c1 = 0.2;
    cfg.line_search.c2 = 0.1;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = OptimizerConfig{};
    cfg.max_iters = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = OptimizerConfig{};
    cfg.n_starts = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Estimate, SimulationFitFromTruthStaysNearTruth) {
    std::mt19937_64 rng(2014);
    const NceProblem p = testing_problems::simulation_problem(1 << 14, 1 << 14, false, rng);
    const MixtureModel truth = testing_problems::simulation_truth_model();
    OptimizerConfig cfg;
    const Eigen::VectorXd x0 = truth.pack();
    const InitSampler from_truth = [&](std::mt19937_64&) { return x0; };
    const EstimationResult r = estimate_mixture(p, 2, cfg, from_truth);
    EXPECT_TRUE(r.converged);
    Eigen::VectorXd g;
    const Eigen::VectorXd x = MixtureModel(r.theta, r.c).pack();
    p.contrast().evaluate(x, 2, &g);
    EXPECT_LE(g.cwiseAbs().maxCoeff() / p.num_data(), cfg.grad_tol);
    EXPECT_LT((x - x0).cwiseAbs().maxCoeff(), 0.5);
}

TEST(Estimate, DefaultSamplerShapeAndOffsets) {
    const InitSampler s = default_init_sampler(3, 2, 1.0);
    std::mt19937_64 rng(4);
    const Eigen::VectorXd x = s(rng);
    ASSERT_EQ(x.size(), 9);
    const double c0 = std::log(1.0 / 3.0) - std::log(2.0);
    for (int k = 0; k < 3; ++k) {
        EXPECT_LE(std::abs(x(6 + k) - c0), 0.5);
    }
    EXPECT_LE(x.head(6).cwiseAbs().maxCoeff(), 1.0);
}

#include <cmath>
#include <random>
#include <gtest/gtest.h>
#include <fmrlasso/gem.hpp>
#include <fmrlasso/model_selection.hpp>
#include <fmrlasso/scaled_lasso.hpp>
#include <fmrlasso/sim_lab.hpp>
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace fmrlasso;
using fixtures::make_theta;

namespace {

Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double d : v) out(i++) = d;
    return out;
}

// Penalized Q-function of one component, written out from its definition.
double component_q(Index r, const Matrix& resp, const Dataset& d, const Vector& phi, double rho, double pi_r,
                   const PenaltySpec& pen)
{
    double s = 0.0;
    for (Index i = 0; i < d.n(); ++i) {
        const double e = rho * d.y(i) - d.x.row(i).dot(phi);
        s += resp(i, r) * (std::log(rho) - 0.5 * e * e);
    }
    const double pw = pen.gamma == 0.0 ? 1.0 : std::pow(pi_r, pen.gamma);
    return -s / static_cast<double>(d.n()) + pen.lambda * pw * phi.cwiseAbs().sum();
}

// Q(phi with phi_j = z) - Q(phi), expanded so the difference carries no cancellation.
double coord_delta(Index r, const Matrix& resp, const Dataset& d, const Vector& phi, double rho, double pi_r,
                   const PenaltySpec& pen, Index j, double z)
{
    const double dz = z - phi(j);
    double s = 0.0;
    for (Index i = 0; i < d.n(); ++i) {
        const double e = rho * d.y(i) - d.x.row(i).dot(phi);
        const double xj = d.x(i, j);
        s += resp(i, r) * (-e * xj * dz + 0.5 * xj * xj * dz * dz);
    }
    const double pw = pen.gamma == 0.0 ? 1.0 : std::pow(pi_r, pen.gamma);
    return s / static_cast<double>(d.n()) + pen.lambda * pw * (std::abs(z) - std::abs(phi(j)));
}

// Q(rho) - Q(rho0) at fixed phi, expanded the same way.
double rho_delta(Index r, const Matrix& resp, const Dataset& d, const Vector& phi, double rho0, double rho)
{
    const double dr = rho - rho0;
    double s = 0.0;
    for (Index i = 0; i < d.n(); ++i) {
        const double f = d.x.row(i).dot(phi);
        s += resp(i, r) * (-std::log1p(dr / rho0) + 0.5 * dr * d.y(i) * ((rho + rho0) * d.y(i) - 2.0 * f));
    }
    return s / static_cast<double>(d.n());
}

bool trace_descends(const std::vector<double>& tr)
{
    for (std::size_t i = 1; i < tr.size(); ++i) {
        if (tr[i] > tr[i - 1] + 1e-8 * (1.0 + std::abs(tr[i - 1]))) return false;
    }
    return true;
}

} // namespace

TEST(EStep, SingleComponentIsAllOnes)
{
    const Dataset d = fixtures::dataset(oracle::random_instance(1, 10, 2));
    const auto t = make_theta(Matrix::Constant(1, 2, 0.3), vec({1.5}), vec({1.0}));
    EXPECT_TRUE((e_step(t, d).r.array() == 1.0).all());
}

TEST(EStep, IdenticalComponentsReturnPi)
{
    const Dataset d = fixtures::dataset(oracle::random_instance(2, 10, 2));
    Matrix phi(3, 2);
    phi.rowwise() = (Eigen::RowVectorXd(2) << 0.5, -0.2).finished();
    const Vector pi = vec({0.2, 0.3, 0.5});
    const auto resp = e_step(make_theta(phi, Vector::Constant(3, 1.3), pi), d);
    for (Index i = 0; i < d.n(); ++i) EXPECT_LT((resp.r.row(i).transpose() - pi).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EStep, HandComputedRow)
{
    // component 1 fits exactly, component 2 has squared residual 2
    const Dataset d(Matrix::Constant(1, 1, 1.0), vec({1.0}));
    Matrix phi(2, 1);
    phi << 1.0, 1.0 - std::sqrt(2.0);
    const auto resp = e_step(make_theta(phi, vec({1.0, 1.0}), vec({0.5, 0.5})), d);
    const double e = std::exp(-1.0);
    EXPECT_NEAR(resp.r(0, 0), 1.0 / (1.0 + e), 1e-14);
    EXPECT_NEAR(resp.r(0, 1), e / (1.0 + e), 1e-14);
}

TEST(EStep, RowsSumToOne)
{
    std::mt19937_64 rng(3);
    const Dataset d = fixtures::dataset(oracle::random_mixture_instance(3, 50, 4, 3));
    for (int trial = 0; trial < 50; ++trial) {
        const auto resp = e_step(fixtures::random_theta(rng, 3, 4, 2.0), d);
        for (Index i = 0; i < d.n(); ++i) EXPECT_NEAR(resp.r.row(i).sum(), 1.0, 1e-12);
    }
}

TEST(MStepPi, FixedPointWhenResponsibilitiesEqualPi)
{
    const auto t = make_theta(Matrix::Constant(2, 2, 0.7), vec({1.0, 1.0}), vec({0.35, 0.65}));
    Responsibilities resp{Matrix(10, 2)};
    resp.r.col(0).setConstant(0.35);
    resp.r.col(1).setConstant(0.65);
    for (double g : {0.0, 0.5, 1.0}) {
        const Vector pi = m_step_pi(resp, t, {0.4, g, std::nullopt}, 0.1);
        EXPECT_LT((pi - t.pi).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(MStepPi, GammaZeroUsesColumnMeans)
{
    Responsibilities resp{Matrix::Zero(100, 2)};
    for (Index i = 0; i < 100; ++i) resp.r(i, i < 30 ? 0 : 1) = 1.0;
    const auto t = make_theta(Matrix::Ones(2, 1), vec({1, 1}), vec({0.5, 0.5}));
    const Vector pi = m_step_pi(resp, t, {1.0, 0.0, std::nullopt}, 0.1);
    EXPECT_NEAR(pi(0), 0.3, 1e-15);
    EXPECT_NEAR(pi(1), 0.7, 1e-15);
}

TEST(MStepPi, LineSearchTakesFirstNonIncreasingStep)
{
    // target (0.9, 0.1); a heavy l1 norm in component 1 makes the full step overshoot
    Responsibilities resp{Matrix(10, 2)};
    resp.r.col(0).setConstant(0.9);
    resp.r.col(1).setConstant(0.1);
    Matrix phi = Matrix::Zero(2, 1);
    phi(0, 0) = 1.2;
    const auto t = make_theta(phi, vec({1, 1}), vec({0.5, 0.5}));
    const PenaltySpec pen{1.0, 1.0, std::nullopt};
    auto obj = [&](const Vector& pi) {
        return -(0.9 * std::log(pi(0)) + 0.1 * std::log(pi(1))) + pen.lambda * pi(0) * 1.2;
    };
    const Vector target = vec({0.9, 0.1});
    double chosen = -1.0;
    double tt = 1.0;
    for (int s = 0; s <= 20; ++s, tt *= 0.1) {
        if (obj(t.pi + tt * (target - t.pi)) <= obj(t.pi)) {
            chosen = tt;
            break;
        }
    }
    ASSERT_DOUBLE_EQ(chosen, 0.1);
    const Vector pi = m_step_pi(resp, t, pen, 0.1);
    EXPECT_LT((pi - (t.pi + 0.1 * (target - t.pi))).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(pi_objective(pi, resp, t, pen), obj(pi), 1e-14);
}

TEST(MStepComponent, ZeroSolutionAboveLambdaMax)
{
    const Dataset d = fixtures::dataset(oracle::random_instance(4, 30, 4));
    const auto t = make_theta(Matrix::Zero(1, 4), vec({1.0}), vec({1.0}));
    Responsibilities resp{Matrix::Ones(30, 1)};
    const std::vector<Index> coords{0, 1, 2, 3};
    const auto step = m_step_component(0, resp, t, d, {1.001 * lambda_max(d), 1.0, std::nullopt}, coords);
    EXPECT_TRUE((step.phi.array() == 0.0).all());
    EXPECT_NEAR(step.rho, std::sqrt(30.0) / d.y.norm(), 1e-14);
}

TEST(MStepComponent, ZeroColumnIsSkipped)
{
    auto in = oracle::random_instance(5, 20, 3);
    in.x.col(1).setZero();
    const Dataset d(in.x, in.y);
    const auto t = make_theta(Matrix::Zero(1, 3), vec({1.0}), vec({1.0}));
    Responsibilities resp{Matrix::Ones(20, 1)};
    const std::vector<Index> coords{0, 1, 2};
    const auto step = m_step_component(0, resp, t, d, {0.0, 1.0, std::nullopt}, coords);
    EXPECT_EQ(step.phi(1), 0.0);
    EXPECT_TRUE(std::isfinite(step.phi(0)) && std::isfinite(step.phi(2)));
}

TEST(MStepComponent, EachCoordinateMinimizesTheQFunction)
{
    std::mt19937_64 rng(6);
    const auto in = oracle::random_mixture_instance(6, 5, 3, 2);
    const Dataset d(in.x, in.y);
    for (double g : {0.0, 0.5, 1.0}) {
        const auto t = fixtures::random_theta(rng, 2, 3, 0.8);
        const auto resp = e_step(t, d);
        const PenaltySpec pen{0.05, g, std::nullopt};
        const std::vector<Index> coords{0, 1, 2};
        for (Index r = 0; r < 2; ++r) {
            const auto step = m_step_component(r, resp, t, d, pen, coords);
            const Vector phi0 = t.phi.row(r).transpose();
            const double rho_ref = oracle::golden_section(
                [&](double rho) { return rho_delta(r, resp.r, d, phi0, step.rho, rho); }, 1e-6, 50.0, 1e-15);
            EXPECT_NEAR(step.rho, rho_ref, 1e-8);
            for (Index j = 0; j < 3; ++j) {
                Vector cur = step.phi;
                for (Index l = j + 1; l < 3; ++l) cur(l) = phi0(l);
                const double ref = oracle::golden_section(
                    [&](double z) { return coord_delta(r, resp.r, d, cur, step.rho, t.pi(r), pen, j, z); }, -50.0, 50.0,
                    1e-15);
                // the difference form and the direct form agree on the objective
                Vector at_ref = cur;
                at_ref(j) = ref;
                EXPECT_NEAR(component_q(r, resp.r, d, at_ref, step.rho, t.pi(r), pen) -
                                component_q(r, resp.r, d, cur, step.rho, t.pi(r), pen),
                            coord_delta(r, resp.r, d, cur, step.rho, t.pi(r), pen, j, ref), 1e-12);
                EXPECT_NEAR(step.phi(j), ref, 1e-8);
            }
        }
    }
}

TEST(InitResponsibilities, SingleClass)
{
    EXPECT_TRUE((init_responsibilities(7, 1, 3).r.array() == 1.0).all());
}

TEST(InitResponsibilities, TwoAndThreeClassRows)
{
    const auto two = init_responsibilities(50, 2, 9);
    for (Index i = 0; i < 50; ++i) {
        const double hi = two.r.row(i).maxCoeff(), lo = two.r.row(i).minCoeff();
        EXPECT_DOUBLE_EQ(hi, 0.9);
        EXPECT_DOUBLE_EQ(lo, 0.1);
    }
    const auto three = init_responsibilities(50, 3, 9);
    for (Index i = 0; i < 50; ++i) {
        EXPECT_NEAR(three.r.row(i).maxCoeff(), 0.9 / 1.1, 1e-15);
        EXPECT_NEAR(three.r.row(i).minCoeff(), 0.1 / 1.1, 1e-15);
        EXPECT_NEAR(three.r.row(i).sum(), 1.0, 1e-15);
    }
    EXPECT_EQ(init_responsibilities(50, 3, 9).r, three.r);
    EXPECT_NE(init_responsibilities(50, 3, 10).r, three.r);
}

TEST(ActiveSetSchedule, PeriodEleven)
{
    EXPECT_TRUE(active_set_schedule(0, 11));
    for (int i = 1; i <= 10; ++i) EXPECT_FALSE(active_set_schedule(i, 11));
    EXPECT_TRUE(active_set_schedule(22, 11));
    EXPECT_TRUE(active_set_schedule(5, 1));
}

TEST(FitBcdGem, SingleComponentMatchesScaledLasso)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Dataset d = fixtures::dataset(oracle::random_instance(40 + seed, 60, 6));
        const double lam = 0.3 * lambda_max(d);
        OptimOptions opts;
        opts.tau = 1e-10;
        const auto gem = fit_bcd_gem(d, 1, {lam, 1.0, std::nullopt}, opts);
        const auto sl = fit_scaled_lasso(d, lam, opts);
        // the mixture criterion carries the 0.5 log(2 pi) density constant
        EXPECT_NEAR(gem.criterion(), sl.criterion + kHalfLog2Pi, 1e-5);
    }
}

TEST(FitBcdGem, AllZeroAboveResponsibilityFreeBound)
{
    // With gamma = 0 a component's zero condition is sqrt(n_r) |<y~, x~_j>| / ||y~|| <= n lambda, and
    // Cauchy-Schwarz bounds the left side by sqrt(n) ||x_j|| for any responsibilities.
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Dataset d = fixtures::dataset(oracle::random_mixture_instance(7 + seed, 60, 5, 2));
        const double bound = d.x.colwise().norm().maxCoeff() / std::sqrt(60.0);
        OptimOptions opts;
        opts.seed = seed;
        const auto fit = fit_bcd_gem(d, 2, {1.01 * bound, 0.0, std::nullopt}, opts);
        EXPECT_TRUE((fit.theta.phi.array() == 0.0).all());
        EXPECT_TRUE(fit.active_set.empty());
    }
}

TEST(FitBcdGem, SingleComponentAllZeroAboveLambdaMax)
{
    const Dataset d = fixtures::dataset(oracle::random_mixture_instance(7, 60, 5, 2));
    const auto fit = fit_bcd_gem(d, 1, {1.01 * lambda_max(d), 1.0, std::nullopt}, OptimOptions{});
    EXPECT_TRUE((fit.theta.phi.array() == 0.0).all());
}

TEST(FitBcdGem, TraceDescendsAndPiStaysInSimplex)
{
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 15; ++trial) {
        const Index k = 1 + trial % 3;
        const Dataset d = fixtures::dataset(oracle::random_mixture_instance(80 + trial, 80, 6, k));
        const double g = trial % 3 == 0 ? 0.0 : (trial % 3 == 1 ? 0.5 : 1.0);
        OptimOptions opts;
        opts.seed = static_cast<std::uint64_t>(trial);
        const auto fit = fit_bcd_gem(d, k, {0.1 * lambda_max(d), g, std::nullopt}, opts);
        EXPECT_TRUE(trace_descends(fit.criterion_trace)) << "trial " << trial;
        EXPECT_TRUE((fit.theta.pi.array() > 0.0).all());
        if (k > 1) EXPECT_TRUE((fit.theta.pi.array() < 1.0).all());
        EXPECT_NEAR(fit.theta.pi.sum(), 1.0, 1e-12);
    }
}

TEST(FitBcdGem, Deterministic)
{
    const Dataset d = fixtures::dataset(oracle::random_mixture_instance(9, 70, 5, 2));
    OptimOptions opts;
    opts.seed = 42;
    const PenaltySpec pen{0.05, 1.0, std::nullopt};
    const auto a = fit_bcd_gem(d, 2, pen, opts);
    const auto b = fit_bcd_gem(d, 2, pen, opts);
    EXPECT_EQ(a.theta.phi, b.theta.phi);
    EXPECT_EQ(a.theta.rho, b.theta.rho);
    EXPECT_EQ(a.theta.pi, b.theta.pi);
    EXPECT_EQ(a.criterion_trace, b.criterion_trace);
}

TEST(FitBcdGem, FrozenCoordinatesStayZero)
{
    const Dataset d = fixtures::dataset(oracle::random_mixture_instance(10, 80, 5, 2));
    OptimOptions opts;
    const auto first = fit_bcd_gem(d, 2, {0.02, 1.0, std::nullopt}, opts);
    MixtureParams start = first.theta;
    start.phi(0, 4) = 0.0;
    start.phi(1, 0) = 0.0;
    const Matrix w = adaptive_weights(start);
    const auto fit = fit_bcd_gem(d, 2, {0.02, 1.0, w}, opts, start);
    EXPECT_EQ(fit.theta.phi(0, 4), 0.0);
    EXPECT_EQ(fit.theta.phi(1, 0), 0.0);
    EXPECT_TRUE(std::isfinite(fit.criterion()));
}

TEST(FitBcdGem, MultiStartKeepsBestCriterion)
{
    const Dataset d = fixtures::dataset(oracle::random_mixture_instance(11, 60, 4, 2));
    OptimOptions one, many;
    many.n_starts = 4;
    const PenaltySpec pen{0.05, 1.0, std::nullopt};
    EXPECT_LE(fit_bcd_gem(d, 2, pen, many).criterion(), fit_bcd_gem(d, 2, pen, one).criterion() + 1e-12);
}

TEST(StationarityCheck, PerturbedParameterIsNotStationary)
{
    const Dataset d = fixtures::dataset(oracle::random_mixture_instance(12, 80, 4, 2));
    OptimOptions opts;
    const PenaltySpec pen{0.05, 0.0, std::nullopt};
    const auto fit = fit_bcd_gem(d, 2, pen, opts);
    MixtureParams bumped = fit.theta;
    bumped.phi(0, 0) += 0.1;
    EXPECT_GT(stationarity_check(bumped, d, pen).residual, 10.0 * opts.tau);
    EXPECT_FALSE(stationarity_check(bumped, d, pen).heuristic);
    EXPECT_TRUE(stationarity_check(bumped, d, {0.05, 1.0, std::nullopt}).heuristic);
}

TEST(StationarityCheck, SingleComponentAgreesWithKkt)
{
    const Dataset d = fixtures::dataset(oracle::random_instance(13, 50, 5));
    const double lam = 0.3 * lambda_max(d);
    OptimOptions opts;
    opts.kkt_tol = 1e-10;
    const auto sl = fit_scaled_lasso(d, lam, opts);
    ASSERT_LE(kkt_check(sl, d, lam), 1e-6);
    const auto t = make_theta(sl.phi.transpose(), vec({sl.rho}), vec({1.0}));
    EXPECT_LE(stationarity_check(t, d, {lam, 0.0, std::nullopt}).residual, 1e-6);
}

TEST(FitBcdGem, RecoversSignPatternOnFirstModel)
{
    const ModelSpec m1 = preset("M1");
    int ok = 0;
    for (int run = 0; run < 20; ++run) {
        const auto sim = generate(m1, 1000 + static_cast<std::uint64_t>(run));
        OptimOptions opts;
        opts.seed = static_cast<std::uint64_t>(run);
        const auto sel = select(sim.data, {2}, lambda_grid(sim.data, 10, Spacing::log), {1.0}, {}, opts);
        const Matrix& phi = sel.best_fit.theta.phi;
        const bool a = (phi.row(0).array() > 0).all() && (phi.row(1).array() < 0).all();
        const bool b = (phi.row(1).array() > 0).all() && (phi.row(0).array() < 0).all();
        ok += (a || b) ? 1 : 0;
    }
    EXPECT_GE(ok, 18);
}

TEST(FitBcdGem, RejectsBadArguments)
{
    const Dataset d = fixtures::dataset(oracle::random_instance(14, 10, 2));
    EXPECT_THROW(fit_bcd_gem(d, 0, {0.1, 1.0, std::nullopt}, OptimOptions{}), invalid_argument_error);
    EXPECT_THROW(fit_bcd_gem(d, 2, {0.1, 1.0, Matrix::Ones(1, 2)}, OptimOptions{}), invalid_argument_error);
    OptimOptions bad;
    bad.tau = 0.0;
    EXPECT_THROW(fit_bcd_gem(d, 1, {0.1, 1.0, std::nullopt}, bad), invalid_argument_error);
}

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <gtest/gtest.h>
#include <fmrlasso/model_selection.hpp>
#include <fmrlasso/scaled_lasso.hpp>
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace fmrlasso;
using fixtures::make_theta;

TEST(LambdaGrid, TwoPointLinear)
{
    const auto g = lambda_grid(3.5, 2, Spacing::linear);
    ASSERT_EQ(g.size(), 2u);
    EXPECT_EQ(g[0], 0.0);
    EXPECT_EQ(g[1], 3.5);
}

TEST(LambdaGrid, EightPointLinearIsEvenlySpaced)
{
    const auto g = lambda_grid(48.9, 8, Spacing::linear, 0.2);
    ASSERT_EQ(g.size(), 8u);
    EXPECT_NEAR(g.front(), 9.78, 1e-12);
    EXPECT_EQ(g.back(), 48.9);
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g[i] - g[i - 1], (48.9 - 9.78) / 7.0, 1e-12);
}

TEST(LambdaGrid, LogSpacingIsGeometric)
{
    const auto g = lambda_grid(1.0, 5, Spacing::log);
    ASSERT_EQ(g.size(), 5u);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(g[static_cast<std::size_t>(i)], std::pow(0.01, 1.0 - i / 4.0), 1e-14);
    EXPECT_EQ(g.back(), 1.0);
}

TEST(LambdaGrid, DataOverloadEndsAtLambdaMax)
{
    const Dataset d = fixtures::dataset(oracle::random_instance(1, 20, 3));
    EXPECT_EQ(lambda_grid(d, 20, Spacing::log).back(), lambda_max(d));
    EXPECT_THROW(lambda_grid(1.0, 1, Spacing::log), invalid_argument_error);
}

TEST(Bic, HandEvaluated)
{
    // rho = e^2 and y_i = c chosen so the unscaled log-likelihood is exactly -10
    const double rho = std::exp(2.0);
    const double c = std::sqrt(2.0 * (2.0 - 0.5 * std::log(2.0 * oracle::kPi) + 0.1)) / rho;
    const Dataset d(Matrix::Ones(100, 1), Vector::Constant(100, c));
    const auto t = make_theta(Matrix::Zero(1, 1), Vector::Constant(1, rho), Vector::Ones(1));
    EXPECT_NEAR(log_likelihood(t, d), -10.0, 1e-11);
    EXPECT_NEAR(bic(t, d), 20.0 + std::log(100.0), 1e-10);
    EXPECT_NEAR(bic(t, d), 24.6052, 1e-4);
}

TEST(Bic, EachNonzeroAddsLogN)
{
    auto in = oracle::random_instance(2, 50, 4);
    in.x.col(3).setZero(); // a coefficient on this column leaves the likelihood unchanged
    const Dataset d(in.x, in.y);
    std::mt19937_64 rng(2);
    auto t = fixtures::random_theta(rng, 2, 4);
    t.phi(0, 3) = 0.0;
    t.phi(1, 3) = 0.0;
    const double base = bic(t, d);
    t.phi(1, 3) = 0.7;
    EXPECT_NEAR(bic(t, d) - base, std::log(50.0), 1e-10);
}

TEST(Bic, EffectiveDof)
{
    auto t = make_theta(Matrix::Zero(2, 8), Vector::Ones(2), Vector::Constant(2, 0.5));
    for (int i = 0; i < 10; ++i) t.phi(i % 2, i / 2) = 1.0;
    EXPECT_EQ(effective_dof(t), 13);
}

TEST(FoldAssignment, DeterministicAndBalanced)
{
    const auto a = fold_assignment(23, 5, 7);
    EXPECT_EQ(a, fold_assignment(23, 5, 7));
    EXPECT_NE(a, fold_assignment(23, 5, 8));
    std::vector<int> counts(5, 0);
    for (int f : a) ++counts[static_cast<std::size_t>(f)];
    for (int c : counts) EXPECT_TRUE(c == 4 || c == 5);
    const auto loo = fold_assignment(10, 10, 1);
    EXPECT_EQ(std::set<int>(loo.begin(), loo.end()).size(), 10u);
    EXPECT_THROW(fold_assignment(10, 1, 0), invalid_argument_error);
}

TEST(CrossValidate, LeaveOneOutSumsSinglePointLosses)
{
    const Dataset d = fixtures::dataset(oracle::random_instance(3, 10, 2));
    const PenaltySpec pen{0.1, 1.0, std::nullopt};
    const OptimOptions opts;
    const auto assign = fold_assignment(10, 10, 4);
    double expected = 0.0;
    for (Index i = 0; i < 10; ++i) {
        std::vector<Index> train;
        for (Index j = 0; j < 10; ++j)
            if (j != i) train.push_back(j);
        const auto fit = fit_bcd_gem(d.rows(train), 1, pen, opts);
        expected += -2.0 * log_density(fit.theta, d.x.row(i).transpose(), d.y(i));
    }
    EXPECT_NEAR(cross_validate(d, 1, pen, assign, opts), expected, 1e-10);
}

TEST(CrossValidate, FixedSeedIsReproducible)
{
    const Dataset d = fixtures::dataset(oracle::random_mixture_instance(5, 60, 3, 2));
    const PenaltySpec pen{0.05, 1.0, std::nullopt};
    EXPECT_EQ(cross_validate(d, 2, pen, 5, OptimOptions{}, 9), cross_validate(d, 2, pen, 5, OptimOptions{}, 9));
}

TEST(CrossValidate, DuplicatedDataRoughlyDoublesLoss)
{
    const auto in = oracle::random_instance(6, 60, 3);
    Matrix x2(120, 3);
    x2 << in.x, in.x;
    Vector y2(120);
    y2 << in.y, in.y;
    const PenaltySpec pen{0.05, 1.0, std::nullopt};
    const double one = cross_validate(Dataset(in.x, in.y), 1, pen, 5, OptimOptions{}, 1);
    const double two = cross_validate(Dataset(x2, y2), 1, pen, 5, OptimOptions{}, 1);
    EXPECT_GT(two / one, 1.7);
    EXPECT_LT(two / one, 2.3);
}

TEST(CrossValidate, PermutationInvariantWithMatchingFolds)
{
    // k = 1 is convex, so refits on permuted rows reach the same optimum
    const Dataset d = fixtures::dataset(oracle::random_instance(7, 40, 3));
    const PenaltySpec pen{0.05, 1.0, std::nullopt};
    OptimOptions opts;
    opts.tau = 1e-12;
    const auto assign = fold_assignment(40, 4, 3);
    std::vector<Index> perm(40);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::mt19937_64 rng(5);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> assign_perm(40);
    for (std::size_t i = 0; i < 40; ++i) assign_perm[i] = assign[static_cast<std::size_t>(perm[i])];
    EXPECT_NEAR(cross_validate(d.rows(perm), 1, pen, assign_perm, opts), cross_validate(d, 1, pen, assign, opts), 1e-6);
}

TEST(Select, SingleCellIsBest)
{
    const Dataset d = fixtures::dataset(oracle::random_mixture_instance(8, 50, 3, 2));
    const auto sel = select(d, {2}, {0.05}, {1.0}, {}, OptimOptions{});
    ASSERT_EQ(sel.table.size(), 1u);
    EXPECT_EQ(sel.best_index, 0u);
    EXPECT_EQ(sel.best().lambda, 0.05);
}

TEST(Select, TableHasEveryCellOnceAndIsReproducible)
{
    const Dataset d = fixtures::dataset(oracle::random_mixture_instance(9, 60, 4, 2));
    const auto grid = lambda_grid(d, 4, Spacing::log);
    SelectionOptions so;
    so.threads = 2;
    const auto a = select(d, {1, 2}, grid, {0.0, 1.0}, so, OptimOptions{});
    so.threads = 1;
    const auto b = select(d, {1, 2}, grid, {0.0, 1.0}, so, OptimOptions{});
    ASSERT_EQ(a.table.size(), 16u);
    std::set<std::tuple<Index, double, double>> cells;
    for (const auto& r : a.table) cells.insert({r.k, r.lambda, r.gamma});
    EXPECT_EQ(cells.size(), 16u);
    EXPECT_EQ(a.best_index, b.best_index);
    for (std::size_t i = 0; i < a.table.size(); ++i) EXPECT_EQ(a.table[i].bic, b.table[i].bic);
}

TEST(Select, CellAboveLambdaMaxIsEmptyModel)
{
    const Dataset d = fixtures::dataset(oracle::random_instance(10, 40, 3));
    const double lm = lambda_max(d);
    const auto sel = select(d, {1}, {0.2 * lm, 1.5 * lm}, {1.0}, {}, OptimOptions{});
    for (const auto& r : sel.table) {
        if (r.lambda > lm) {
            EXPECT_EQ(r.d_e, 1);
        }
    }
}

TEST(Select, ValidationCriterionNeedsData)
{
    const Dataset d = fixtures::dataset(oracle::random_instance(11, 30, 3));
    SelectionOptions so;
    so.criterion = Criterion::validation;
    EXPECT_THROW(select(d, {1}, {0.1}, {1.0}, so, OptimOptions{}), invalid_argument_error);
    so.validation = fixtures::dataset(oracle::random_instance(12, 30, 3));
    const auto sel = select(d, {1}, {0.05, 0.1}, {1.0}, so, OptimOptions{});
    for (const auto& r : sel.table) EXPECT_TRUE(std::isfinite(r.cv_loss));
}

TEST(Select, CrossValidationCriterion)
{
    const Dataset d = fixtures::dataset(oracle::random_instance(13, 40, 3));
    SelectionOptions so;
    so.criterion = Criterion::cv;
    so.folds = 4;
    const auto sel = select(d, {1}, {0.05, 0.2}, {1.0}, so, OptimOptions{});
    const auto& best = sel.best();
    EXPECT_NEAR(best.cv_loss,
                cross_validate(d, 1, {best.lambda, 1.0, std::nullopt}, fold_assignment(40, 4, 0), OptimOptions{}),
                1e-12);
}

TEST(AdaptiveWeights, InverseMagnitudesAndFreezing)
{
    auto t = make_theta(Matrix::Zero(1, 3), Vector::Ones(1), Vector::Ones(1));
    t.phi(0, 0) = 0.5;
    t.phi(0, 2) = -4.0;
    const Matrix w = adaptive_weights(t);
    EXPECT_EQ(w(0, 0), 2.0);
    EXPECT_TRUE(std::isinf(w(0, 1)));
    EXPECT_EQ(w(0, 2), 0.25);
    EXPECT_THROW(adaptive_weights(make_theta(Matrix::Zero(1, 3), Vector::Ones(1), Vector::Ones(1))),
                 degenerate_initialization_error);
}

TEST(FitAdaptive, NeverResurrectsZeroCoefficients)
{
    const Dataset d = fixtures::dataset(oracle::random_mixture_instance(14, 100, 8, 2));
    const auto first = select(d, {2}, lambda_grid(d, 6, Spacing::log), {1.0}, {}, OptimOptions{});
    const MixtureParams& init = first.best_fit.theta;
    const Matrix w = adaptive_weights(init);
    const auto grid = lambda_grid(lambda_max_weighted(d, w), 6, Spacing::log);
    const auto res = fit_adaptive(d, init, grid, 1.0, {}, OptimOptions{});
    for (Index r = 0; r < init.k(); ++r)
        for (Index j = 0; j < init.p(); ++j)
            if (init.phi(r, j) == 0.0) EXPECT_EQ(res.fit.theta.phi(r, j), 0.0);
    EXPECT_EQ(res.selection.table.size(), 6u);
    EXPECT_LE(res.fit.active_set.size(), first.best_fit.active_set.size());
}

TEST(LambdaMaxWeighted, UnitWeightsMatchPlainLambdaMax)
{
    const Dataset d = fixtures::dataset(oracle::random_instance(15, 30, 4));
    EXPECT_NEAR(lambda_max_weighted(d, Matrix::Ones(2, 4)), lambda_max(d), 1e-15);
}

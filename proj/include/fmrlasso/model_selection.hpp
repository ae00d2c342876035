#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>
#include <fmrlasso/core_model.hpp>
#include <fmrlasso/gem.hpp>
#include <fmrlasso/parallel.hpp>
#include <fmrlasso/scaled_lasso.hpp>

namespace fmrlasso {

enum class Spacing { linear, log };
enum class Criterion { bic, cv, validation };

inline const char* to_string(Criterion c)
{
    switch (c) {
    case Criterion::bic: return "bic";
    case Criterion::cv: return "cv";
    case Criterion::validation: return "validation";
    }
    return "?";
}

/**
 * m strictly increasing values ending at upper. Linear grids start at
 * lo_fraction * upper (default 0); log grids are geometric from
 * lo_fraction * upper (default 1/100).
 */
inline std::vector<double> lambda_grid(double upper, int m, Spacing spacing, std::optional<double> lo_fraction = {})
{
    if (m < 2) throw invalid_argument_error("lambda_grid: need at least two points");
    if (!(upper > 0.0) || !std::isfinite(upper)) throw invalid_argument_error("lambda_grid: upper end must be positive");
    std::vector<double> out(static_cast<std::size_t>(m));
    if (spacing == Spacing::linear) {
        const double lo = lo_fraction.value_or(0.0) * upper;
        if (!(lo >= 0.0 && lo < upper)) throw invalid_argument_error("lambda_grid: lower fraction must lie in [0, 1)");
        for (int i = 0; i < m; ++i) out[static_cast<std::size_t>(i)] = lo + (upper - lo) * i / (m - 1);
    } else {
        const double lo = lo_fraction.value_or(0.01) * upper;
        if (!(lo > 0.0 && lo < upper)) throw invalid_argument_error("lambda_grid: log grid needs a lower fraction in (0, 1)");
        const double ratio = std::log(upper / lo);
        for (int i = 0; i < m; ++i) out[static_cast<std::size_t>(i)] = lo * std::exp(ratio * i / (m - 1));
    }
    out.back() = upper;
    return out;
}

/// Grid ending at lambda_max(data); the upper end is a heuristic when k > 1.
inline std::vector<double> lambda_grid(const Dataset& data, int m, Spacing spacing, std::optional<double> lo_fraction = {})
{
    return lambda_grid(lambda_max(data), m, spacing, lo_fraction);
}

/// lambda_max with per-coefficient weights: max over unfrozen (r, j) of |<Y, X_j>| / (sqrt(n) ||Y|| w_rj).
inline double lambda_max_weighted(const Dataset& data, const Matrix& weights)
{
    const double ynorm = data.y.norm();
    if (!(ynorm > 0.0)) throw invalid_argument_error("lambda_max_weighted: response vector is identically zero");
    const Vector xy = data.x.transpose() * data.y;
    const double scale = std::sqrt(static_cast<double>(data.n())) * ynorm;
    double best = 0.0;
    for (Index r = 0; r < weights.rows(); ++r) {
        for (Index j = 0; j < weights.cols(); ++j) {
            const double w = weights(r, j);
            if (std::isinf(w) || w <= 0.0) continue;
            best = std::max(best, std::abs(xy(j)) / (scale * w));
        }
    }
    return best;
}

/// Effective number of parameters: k scales, k - 1 proportions, nonzero coefficients.
inline Index effective_dof(const MixtureParams& theta)
{
    return theta.k() + (theta.k() - 1) + static_cast<Index>(selected_set(theta).size());
}

inline double bic(const MixtureParams& theta, const Dataset& data)
{
    return -2.0 * log_likelihood(theta, data) +
           std::log(static_cast<double>(data.n())) * static_cast<double>(effective_dof(theta));
}

inline double bic(const FitResult& fit, const Dataset& data) { return bic(fit.theta, data); }

/// Seeded shuffle of 0..n-1; row at shuffled position q goes to fold q mod folds.
inline std::vector<int> fold_assignment(Index n, int folds, std::uint64_t seed)
{
    if (folds < 2 || folds > n) throw invalid_argument_error("fold_assignment: need 2 <= folds <= n");
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (std::size_t q = 0; q < perm.size(); ++q) {
        out[static_cast<std::size_t>(perm[q])] = static_cast<int>(q % static_cast<std::size_t>(folds));
    }
    return out;
}

/// Sum over folds of twice the held-out negative log-likelihood, for a fixed fold assignment.
inline double cross_validate(const Dataset& data, Index k, const PenaltySpec& pen, const std::vector<int>& assignment,
                             const OptimOptions& opts, const std::optional<MixtureParams>& start = std::nullopt)
{
    if (static_cast<Index>(assignment.size()) != data.n()) {
        throw invalid_argument_error("cross_validate: fold assignment length does not match n");
    }
    const int folds = *std::max_element(assignment.begin(), assignment.end()) + 1;
    double total = 0.0;
    for (int f = 0; f < folds; ++f) {
        std::vector<Index> train;
        std::vector<Index> test;
        for (Index i = 0; i < data.n(); ++i) {
            (assignment[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
        }
        if (test.empty()) continue;
        if (train.empty()) throw fold_error(f, "no training rows");
        try {
            const Dataset tr = data.rows(train);
            const FitResult fit = fit_bcd_gem(tr, k, pen, opts, start);
            total += -2.0 * log_likelihood(fit.theta, data.rows(test));
        } catch (const fold_error&) {
            throw;
        } catch (const error& e) {
            throw fold_error(f, e.what());
        }
    }
    return total;
}

inline double cross_validate(const Dataset& data, Index k, const PenaltySpec& pen, int folds, const OptimOptions& opts,
                             std::uint64_t seed)
{
    return cross_validate(data, k, pen, fold_assignment(data.n(), folds, seed), opts);
}

/// One cell of a selection grid.
struct SelectionRecord
{
    Index k = 1;
    double lambda = 0.0;
    double gamma = 1.0;
    double bic = std::numeric_limits<double>::quiet_NaN();
    double cv_loss = std::numeric_limits<double>::quiet_NaN(); // CV or validation loss when computed
    Index d_e = 0;
    double criterion = std::numeric_limits<double>::quiet_NaN(); // penalized criterion of the full-data fit
    int n_iterations = 0;
    bool converged = false;
    std::optional<std::string> failure;

    double score(Criterion c) const { return c == Criterion::bic ? bic : cv_loss; }
};

struct SelectionResult
{
    Criterion criterion_kind = Criterion::bic;
    std::vector<SelectionRecord> table;
    std::size_t best_index = 0;
    FitResult best_fit;

    const SelectionRecord& best() const { return table.at(best_index); }
};

struct SelectionOptions
{
    Criterion criterion = Criterion::bic;
    int folds = 10;
    int threads = 1;
    std::optional<Dataset> validation; // required for Criterion::validation
};

namespace detail {

struct SelectionCell
{
    Index k;
    double gamma;
    double lambda;
};

inline SelectionResult select_impl(const Dataset& data, const std::vector<Index>& k_range, const std::vector<double>& lambdas,
                                   const std::vector<double>& gammas, const SelectionOptions& sopts, const OptimOptions& opts,
                                   const std::optional<Matrix>& weights, const std::optional<MixtureParams>& start)
{
    if (k_range.empty() || lambdas.empty() || gammas.empty()) {
        throw invalid_argument_error("select: grids must be nonempty");
    }
    if (sopts.criterion == Criterion::validation && !sopts.validation) {
        throw invalid_argument_error("select: validation criterion needs validation data");
    }
    if (sopts.criterion == Criterion::cv && (sopts.folds < 2 || sopts.folds > data.n())) {
        throw invalid_argument_error("select: need 2 <= folds <= n");
    }
    std::vector<double> desc = lambdas;
    std::sort(desc.begin(), desc.end(), std::greater<>());
    std::vector<SelectionCell> cells;
    for (double g : gammas)
        for (Index k : k_range)
            for (double l : desc) cells.push_back({k, g, l});

    std::vector<int> assignment;
    if (sopts.criterion == Criterion::cv) assignment = fold_assignment(data.n(), sopts.folds, opts.seed);

    std::vector<SelectionRecord> table(cells.size());
    std::vector<std::optional<FitResult>> fits(cells.size());
    parallel_for(cells.size(), sopts.threads, [&](std::size_t c) {
        const SelectionCell& cell = cells[c];
        SelectionRecord& rec = table[c];
        rec.k = cell.k;
        rec.lambda = cell.lambda;
        rec.gamma = cell.gamma;
        PenaltySpec pen{cell.lambda, cell.gamma, weights};
        try {
            FitResult fit = fit_bcd_gem(data, cell.k, pen, opts, start);
            rec.bic = bic(fit, data);
            rec.d_e = effective_dof(fit.theta);
            rec.criterion = fit.criterion();
            rec.n_iterations = fit.n_iterations;
            rec.converged = fit.converged;
            if (sopts.criterion == Criterion::validation) {
                rec.cv_loss = -2.0 * log_likelihood(fit.theta, *sopts.validation);
            } else if (sopts.criterion == Criterion::cv) {
                rec.cv_loss = cross_validate(data, cell.k, pen, assignment, opts, start);
            }
            fits[c] = std::move(fit);
        } catch (const error& e) {
            rec.failure = e.kind() + ": " + e.what();
        }
    });

    SelectionResult out;
    out.criterion_kind = sopts.criterion;
    std::optional<std::size_t> best;
    for (std::size_t c = 0; c < table.size(); ++c) {
        const SelectionRecord& rec = table[c];
        const double v = rec.score(sopts.criterion);
        if (rec.failure || !std::isfinite(v)) continue;
        if (!best) {
            best = c;
            continue;
        }
        const SelectionRecord& b = table[*best];
        // ties: larger lambda (sparser), then smaller k
        if (std::make_tuple(v, -rec.lambda, rec.k) < std::make_tuple(b.score(sopts.criterion), -b.lambda, b.k)) best = c;
    }
    if (!best) throw error("selection_failed", "select: every grid cell failed");
    out.best_index = *best;
    out.best_fit = std::move(*fits[*best]);
    out.table = std::move(table);
    return out;
}

} // namespace detail

/**
 * Exhaustive search over k_range x lambdas x gammas. Each cell is fitted on
 * the full data; the best cell minimizes BIC, the CV loss, or the
 * validation loss. Failed cells are kept in the table with their reason.
 */
inline SelectionResult select(const Dataset& data, const std::vector<Index>& k_range, const std::vector<double>& lambdas,
                              const std::vector<double>& gammas, const SelectionOptions& sopts, const OptimOptions& opts)
{
    return detail::select_impl(data, k_range, lambdas, gammas, sopts, opts, std::nullopt, std::nullopt);
}

/// Adaptive weights 1 / |phi_ini|; zero initial coefficients get +inf.
inline Matrix adaptive_weights(const MixtureParams& initial)
{
    Matrix w(initial.k(), initial.p());
    bool any = false;
    for (Index r = 0; r < w.rows(); ++r) {
        for (Index j = 0; j < w.cols(); ++j) {
            const double a = std::abs(initial.phi(r, j));
            w(r, j) = a == 0.0 ? kInf : 1.0 / a;
            any = any || a != 0.0;
        }
    }
    if (!any) {
        throw degenerate_initialization_error("adaptive_weights: every initial coefficient is zero");
    }
    return w;
}

struct AdaptiveResult
{
    FitResult fit;
    SelectionResult selection;
    Matrix weights;
};

/**
 * Two-stage estimator: re-weighted l1 penalty with w = 1 / |phi_ini| and
 * every fit started from `initial` so component labels stay aligned with
 * the weight rows.
 */
inline AdaptiveResult fit_adaptive(const Dataset& data, const MixtureParams& initial, const std::vector<double>& lambdas,
                                   double gamma, const SelectionOptions& sopts, const OptimOptions& opts)
{
    initial.validate();
    detail::check_dims(initial, data);
    AdaptiveResult out;
    out.weights = adaptive_weights(initial);
    out.selection = detail::select_impl(data, {initial.k()}, lambdas, {gamma}, sopts, opts, out.weights, initial);
    out.fit = out.selection.best_fit;
    return out;
}

} // namespace fmrlasso

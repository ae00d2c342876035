#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>
#include <fmrlasso/core_model.hpp>
#include <fmrlasso/gem.hpp>
#include <fmrlasso/model_selection.hpp>
#include <fmrlasso/parallel.hpp>

namespace fmrlasso {

enum class CovKind { identity, ar1 };

/**
 * Generative description of a simulation model. beta holds the k x p_act
 * active coefficients; covariates p_act..p_tot-1 are pure noise.
 * With ar1, corr(X_l, X_m) = rate^|l - m| over all p_tot covariates.
 */
struct ModelSpec
{
    std::string name;
    Index n = 100;
    Matrix beta;
    Vector sigma;
    Vector pi;
    CovKind cov_kind = CovKind::identity;
    double ar1_rate = 0.0;
    Index p_tot = 0;

    Index k() const { return beta.rows(); }
    Index p_act() const { return beta.cols(); }

    void validate() const
    {
        if (beta.rows() < 1 || sigma.size() != beta.rows() || pi.size() != beta.rows()) {
            throw invalid_argument_error("ModelSpec: inconsistent component count");
        }
        if (p_tot < p_act()) throw invalid_argument_error("ModelSpec: p_tot must be >= p_act");
        if (n < 1) throw invalid_argument_error("ModelSpec: n must be >= 1");
        detail::check_positive(sigma, "ModelSpec", "sigma");
        detail::check_simplex(pi, "ModelSpec");
        if (cov_kind == CovKind::ar1 && !(ar1_rate > 0.0 && ar1_rate < 1.0)) {
            throw invalid_argument_error("ModelSpec: ar1 rate must lie in (0, 1)");
        }
    }

    /// k x p_tot coefficients, zero-padded.
    Matrix full_beta() const
    {
        Matrix out = Matrix::Zero(k(), p_tot);
        out.leftCols(p_act()) = beta;
        return out;
    }

    Matrix covariance() const
    {
        Matrix cov = Matrix::Identity(p_tot, p_tot);
        if (cov_kind == CovKind::ar1) {
            for (Index l = 0; l < p_tot; ++l)
                for (Index m = 0; m < p_tot; ++m)
                    cov(l, m) = std::pow(ar1_rate, static_cast<double>(std::abs(l - m)));
        }
        return cov;
    }

    /// Indices of covariates with a nonzero coefficient in some component.
    std::vector<Index> active_covariates() const
    {
        std::vector<Index> out;
        for (Index j = 0; j < p_act(); ++j) {
            if ((beta.col(j).array() != 0.0).any()) out.push_back(j);
        }
        return out;
    }

    ModelSpec with_p_tot(Index p) const
    {
        ModelSpec out = *this;
        out.p_tot = p;
        out.validate();
        return out;
    }
};

namespace detail {

inline Matrix rows_of(std::initializer_list<std::initializer_list<double>> rows)
{
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
    Index r = 0;
    for (const auto& row : rows) {
        Index c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

} // namespace detail

/**
 * Element of the sparsity series, index 1..7: p_act = index + 2,
 * n = 50 * index, p_tot = 10 * 2^(index - 1), beta_1 = 3, beta_2 = -1 on the
 * active covariates, sigma = 0.5, pi = 0.5.
 */
inline ModelSpec sparsity_series(int index)
{
    if (index < 1 || index > 7) throw invalid_argument_error("sparsity_series: index must be in 1..7");
    ModelSpec s;
    s.name = "sparsity_series(" + std::to_string(index) + ")";
    const Index p_act = index + 2;
    s.n = 50 * index;
    s.p_tot = 10 * (Index{1} << (index - 1));
    s.beta.resize(2, p_act);
    s.beta.row(0).setConstant(3.0);
    s.beta.row(1).setConstant(-1.0);
    s.sigma = Vector::Constant(2, 0.5);
    s.pi = Vector::Constant(2, 0.5);
    s.validate();
    return s;
}

/// Named simulation designs: M1..M5, M1_unbalanced, sparsity_series(i).
inline ModelSpec preset(std::string_view name)
{
    ModelSpec s;
    s.name = std::string(name);
    const Matrix two = detail::rows_of({{3, 3, 3, 3, 3}, {-1, -1, -1, -1, -1}});
    if (name == "M1" || name == "M2" || name == "M3" || name == "M5" || name == "M1_unbalanced") {
        s.n = 100;
        s.beta = two;
        s.pi = Vector::Constant(2, 0.5);
        double sd = 0.5;
        if (name == "M2") sd = 1.0;
        if (name == "M3") sd = 1.5;
        if (name == "M5") {
            sd = 0.95;
            s.cov_kind = CovKind::ar1;
            s.ar1_rate = 0.8;
        }
        if (name == "M1_unbalanced") {
            s.pi(0) = 0.3;
            s.pi(1) = 0.7;
        }
        s.sigma = Vector::Constant(2, sd);
    } else if (name == "M4") {
        s.n = 150;
        s.beta = detail::rows_of({{3, 3, 0, 0, 0, 0}, {0, 0, -2, -2, 0, 0}, {0, 0, 0, 0, -3, 2}});
        s.sigma = Vector::Constant(3, 0.5);
        s.pi = Vector::Constant(3, 1.0 / 3.0);
        s.pi(2) = 1.0 - s.pi(0) - s.pi(1);
    } else if (name.starts_with("sparsity_series(") && name.ends_with(")")) {
        const std::string inner(name.substr(16, name.size() - 17));
        int idx = 0;
        try {
            idx = std::stoi(inner);
        } catch (const std::exception&) {
            throw invalid_argument_error("preset: malformed sparsity_series index '" + inner + "'");
        }
        return sparsity_series(idx);
    } else {
        throw invalid_argument_error("preset: unknown model '" + std::string(name) + "'");
    }
    s.p_tot = s.p_act();
    s.validate();
    return s;
}

inline double snr(const ModelSpec& spec)
{
    spec.validate();
    return snr(spec.full_beta(), spec.sigma, spec.pi, spec.covariance());
}

struct SimulatedData
{
    Dataset data;
    NaturalParams truth;
    std::vector<Index> labels;
};

/**
 * Draws n rows: X ~ N(0, Cov) via the Cholesky factor of Cov, a component
 * label ~ Multinomial(pi), then y = x' beta_label + sigma_label * z.
 * Uses std::mt19937_64 with std::normal_distribution, so streams are
 * reproducible for a given seed and standard library.
 */
inline SimulatedData generate(const ModelSpec& spec, std::uint64_t seed, Index n_override = 0)
{
    spec.validate();
    const Index n = n_override > 0 ? n_override : spec.n;
    const Index p = spec.p_tot;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::discrete_distribution<Index> label_dist(spec.pi.data(), spec.pi.data() + spec.pi.size());

    Matrix z(n, p);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < p; ++j) z(i, j) = normal(rng);
    Matrix x;
    if (spec.cov_kind == CovKind::identity) {
        x = std::move(z);
    } else {
        Eigen::LLT<Matrix> llt(spec.covariance());
        if (llt.info() != Eigen::Success) throw invalid_argument_error("generate: covariance not positive definite");
        x = z * llt.matrixL().transpose();
    }

    const Matrix beta = spec.full_beta();
    SimulatedData out;
    out.labels.resize(static_cast<std::size_t>(n));
    Vector y(n);
    for (Index i = 0; i < n; ++i) {
        const Index lab = label_dist(rng);
        out.labels[static_cast<std::size_t>(i)] = lab;
        y(i) = x.row(i).dot(beta.row(lab)) + spec.sigma(lab) * normal(rng);
    }
    out.data = Dataset(std::move(x), std::move(y));
    out.truth.beta = beta;
    out.truth.sigma = spec.sigma;
    out.truth.pi = spec.pi;
    return out;
}

struct RunMetrics
{
    double pred_loss = 0.0; // twice the unscaled negative log-likelihood on test data
    Index tp = 0;
    Index fp = 0;
    double tpr = 0.0;
    double fpr = 0.0;
};

/// Test-set loss and selection counts; a covariate is selected when any component uses it.
inline RunMetrics evaluate(const MixtureParams& theta, const std::vector<Index>& truth_active, const Dataset& test)
{
    detail::check_dims(theta, test);
    RunMetrics m;
    m.pred_loss = -2.0 * log_likelihood(theta, test);
    const Index p = theta.p();
    std::vector<bool> is_true(static_cast<std::size_t>(p), false);
    for (Index j : truth_active) {
        if (j < 0 || j >= p) throw invalid_argument_error("evaluate: active covariate out of range");
        is_true[static_cast<std::size_t>(j)] = true;
    }
    for (Index j = 0; j < p; ++j) {
        if ((theta.phi.col(j).array() != 0.0).any()) {
            if (is_true[static_cast<std::size_t>(j)]) ++m.tp;
            else ++m.fp;
        }
    }
    const Index n_active = static_cast<Index>(truth_active.size());
    const Index n_inactive = p - n_active;
    m.tpr = n_active > 0 ? static_cast<double>(m.tp) / static_cast<double>(n_active) : 0.0;
    m.fpr = n_inactive > 0 ? static_cast<double>(m.fp) / static_cast<double>(n_inactive) : 0.0;
    return m;
}

inline RunMetrics evaluate(const FitResult& fit, const std::vector<Index>& truth_active, const Dataset& test)
{
    return evaluate(fit.theta, truth_active, test);
}

enum class Pipeline { one_stage, adaptive };

struct StudyConfig
{
    int n_runs = 20;
    Pipeline pipeline = Pipeline::one_stage;
    Criterion selection = Criterion::validation;
    std::uint64_t seed = 0;
    double gamma = 1.0;
    int grid_size = 12;
    Spacing spacing = Spacing::log;
    double lo_fraction = 0.01;
    std::optional<Index> k; // defaults to the true number of components
    int folds = 10;
    int threads = 1;
    OptimOptions opts;
};

struct RunRecord
{
    int run = 0;
    std::uint64_t seed = 0;
    std::optional<RunMetrics> one_stage;
    std::optional<RunMetrics> adaptive;
    double lambda_one_stage = std::numeric_limits<double>::quiet_NaN();
    double lambda_adaptive = std::numeric_limits<double>::quiet_NaN();
    std::optional<std::string> failure;
};

struct Quartiles
{
    double q25 = 0.0;
    double median = 0.0;
    double q75 = 0.0;
};

/// Sample quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q)
{
    if (v.empty()) throw invalid_argument_error("quantile: empty sample");
    std::sort(v.begin(), v.end());
    const double h = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Quartiles quartiles(const std::vector<double>& v)
{
    return {quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75)};
}

struct MetricSummary
{
    int n = 0;
    Quartiles pred_loss, tp, fp, tpr, fpr;
};

inline MetricSummary summarize(const std::vector<RunMetrics>& runs)
{
    MetricSummary s;
    s.n = static_cast<int>(runs.size());
    if (runs.empty()) return s;
    std::vector<double> loss, tp, fp, tpr, fpr;
    for (const auto& m : runs) {
        loss.push_back(m.pred_loss);
        tp.push_back(static_cast<double>(m.tp));
        fp.push_back(static_cast<double>(m.fp));
        tpr.push_back(m.tpr);
        fpr.push_back(m.fpr);
    }
    s.pred_loss = quartiles(loss);
    s.tp = quartiles(tp);
    s.fp = quartiles(fp);
    s.tpr = quartiles(tpr);
    s.fpr = quartiles(fpr);
    return s;
}

struct StudySummary
{
    ModelSpec spec;
    StudyConfig config;
    std::vector<RunRecord> runs; // sorted by run index
    std::optional<MetricSummary> one_stage;
    std::optional<MetricSummary> adaptive;
    int n_failed = 0;
};

namespace detail {

inline RunRecord run_one(const ModelSpec& spec, const StudyConfig& cfg, int run)
{
    RunRecord rec;
    rec.run = run;
    rec.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(run));
    const SimulatedData train = generate(spec, mix_seed(rec.seed, 0));
    const SimulatedData valid = generate(spec, mix_seed(rec.seed, 1));
    const SimulatedData test = generate(spec, mix_seed(rec.seed, 2));
    const std::vector<Index> active = spec.active_covariates();
    const Index k = cfg.k.value_or(spec.k());

    OptimOptions opts = cfg.opts;
    opts.seed = mix_seed(rec.seed, 3);
    SelectionOptions sopts;
    sopts.criterion = cfg.selection;
    sopts.folds = cfg.folds;
    if (cfg.selection == Criterion::validation) sopts.validation = valid.data;

    try {
        const auto lambdas = lambda_grid(train.data, cfg.grid_size, cfg.spacing, cfg.lo_fraction);
        const SelectionResult first = select(train.data, {k}, lambdas, {cfg.gamma}, sopts, opts);
        rec.one_stage = evaluate(first.best_fit, active, test.data);
        rec.lambda_one_stage = first.best().lambda;
        if (cfg.pipeline == Pipeline::adaptive) {
            const Matrix w = adaptive_weights(first.best_fit.theta);
            const auto grid2 = lambda_grid(lambda_max_weighted(train.data, w), cfg.grid_size, cfg.spacing, cfg.lo_fraction);
            const AdaptiveResult second = fit_adaptive(train.data, first.best_fit.theta, grid2, cfg.gamma, sopts, opts);
            rec.adaptive = evaluate(second.fit, active, test.data);
            rec.lambda_adaptive = second.selection.best().lambda;
        }
    } catch (const error& e) {
        rec.failure = e.kind() + ": " + e.what();
    }
    return rec;
}

} // namespace detail

/**
 * Repeated simulation: per run, independent train / validation / test sets
 * of size spec.n; lambda tuned by the configured criterion; metrics on test.
 * The adaptive pipeline reports both the one-stage and the adaptive fit.
 */
inline StudySummary run_study(const ModelSpec& spec, const StudyConfig& cfg)
{
    spec.validate();
    cfg.opts.validate();
    if (cfg.n_runs < 1) throw invalid_argument_error("run_study: n_runs must be >= 1");
    StudySummary out;
    out.spec = spec;
    out.config = cfg;
    out.runs.resize(static_cast<std::size_t>(cfg.n_runs));
    detail::parallel_for(out.runs.size(), cfg.threads, [&](std::size_t i) {
        out.runs[i] = detail::run_one(spec, cfg, static_cast<int>(i));
    });
    std::vector<RunMetrics> one, two;
    for (const auto& r : out.runs) {
        if (r.failure) ++out.n_failed;
        if (r.one_stage) one.push_back(*r.one_stage);
        if (r.adaptive) two.push_back(*r.adaptive);
    }
    if (!one.empty()) out.one_stage = summarize(one);
    if (!two.empty()) out.adaptive = summarize(two);
    return out;
}

struct BenchVariant
{
    double bic = 0.0;
    double cpu_seconds = 0.0;
    double em_iterations = 0.0;
    bool converged = true;               // every repetition converged
    double stationarity_residual = 0.0;  // worst over repetitions
};

struct BenchRow
{
    double lambda = 0.0; // median over repetitions (the grid scales with each data set)
    BenchVariant active;
    BenchVariant full;
};

struct BenchConfig
{
    int grid_size = 8;
    int reps = 3;
    std::uint64_t seed = 0;
    Index n = 0; // 0 keeps spec.n
    std::optional<Index> k;
    double gamma = 1.0;
    Spacing spacing = Spacing::linear;
    double lo_fraction = 0.2;
    OptimOptions opts;
};

struct BenchResult
{
    ModelSpec spec;
    BenchConfig config;
    std::vector<BenchRow> rows; // descending lambda
    std::size_t best_index = 0; // minimum median BIC of the active-set variant

    double speedup_at_best() const
    {
        const auto& r = rows.at(best_index);
        return r.full.cpu_seconds / std::max(r.active.cpu_seconds, 1e-12);
    }
};

/**
 * Times the active-set schedule against full sweeps on every grid value.
 * Both variants start from the same seed; medians are taken over reps
 * independently drawn data sets.
 */
inline BenchResult run_bench(const ModelSpec& spec, const BenchConfig& cfg)
{
    spec.validate();
    cfg.opts.validate();
    if (cfg.grid_size < 1 || cfg.reps < 1) throw invalid_argument_error("run_bench: grid and reps must be >= 1");
    const auto m = static_cast<std::size_t>(cfg.grid_size);
    const auto reps = static_cast<std::size_t>(cfg.reps);
    const Index k = cfg.k.value_or(spec.k());

    struct Sample
    {
        double lambda, bic_a, bic_f, t_a, t_f, it_a, it_f;
    };
    std::vector<std::vector<Sample>> samples(m, std::vector<Sample>(reps));
    std::vector<BenchRow> rows(m);

    auto cpu_now = [] { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; };
    for (std::size_t rep = 0; rep < reps; ++rep) {
        const std::uint64_t rep_seed = detail::mix_seed(cfg.seed, rep);
        const SimulatedData sim = generate(spec, detail::mix_seed(rep_seed, 0), cfg.n);
        const auto grid = lambda_grid(sim.data, cfg.grid_size, cfg.spacing, cfg.lo_fraction);
        for (std::size_t g = 0; g < m; ++g) {
            const double lambda = grid[m - 1 - g];
            PenaltySpec pen{lambda, cfg.gamma, std::nullopt};
            OptimOptions oa = cfg.opts;
            oa.seed = detail::mix_seed(rep_seed, 3);
            OptimOptions of = oa;
            of.active_set_period = 1;

            double t0 = cpu_now();
            const FitResult fa = fit_bcd_gem(sim.data, k, pen, oa);
            double t1 = cpu_now();
            const FitResult ff = fit_bcd_gem(sim.data, k, pen, of);
            double t2 = cpu_now();

            samples[g][rep] = {lambda, bic(fa, sim.data), bic(ff, sim.data), t1 - t0, t2 - t1,
                               static_cast<double>(fa.n_iterations), static_cast<double>(ff.n_iterations)};
            auto& row = rows[g];
            row.active.converged = row.active.converged && fa.converged;
            row.full.converged = row.full.converged && ff.converged;
            row.active.stationarity_residual = std::max(row.active.stationarity_residual, fa.stationarity_residual);
            row.full.stationarity_residual = std::max(row.full.stationarity_residual, ff.stationarity_residual);
        }
    }

    auto median_of = [&](std::size_t g, double Sample::*field) {
        std::vector<double> v;
        for (const auto& s : samples[g]) v.push_back(s.*field);
        return quantile(std::move(v), 0.5);
    };
    BenchResult out;
    out.spec = spec;
    out.config = cfg;
    for (std::size_t g = 0; g < m; ++g) {
        auto& row = rows[g];
        row.lambda = median_of(g, &Sample::lambda);
        row.active.bic = median_of(g, &Sample::bic_a);
        row.full.bic = median_of(g, &Sample::bic_f);
        row.active.cpu_seconds = median_of(g, &Sample::t_a);
        row.full.cpu_seconds = median_of(g, &Sample::t_f);
        row.active.em_iterations = median_of(g, &Sample::it_a);
        row.full.em_iterations = median_of(g, &Sample::it_f);
        if (row.active.bic < rows[out.best_index].active.bic) out.best_index = g;
    }
    out.rows = std::move(rows);
    return out;
}

} // namespace fmrlasso

#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>
#include <fmrlasso/core_model.hpp>
#include <fmrlasso/options.hpp>
#include <fmrlasso/scaled_lasso.hpp>

namespace fmrlasso {

/// n x k matrix of posterior component memberships; rows sum to one.
struct Responsibilities
{
    Matrix r;

    Index n() const { return r.rows(); }
    Index k() const { return r.cols(); }
};

struct FitResult
{
    MixtureParams theta;
    PenaltySpec penalty;
    std::vector<double> criterion_trace; // penalized criterion after every EM iteration
    int n_iterations = 0;
    bool converged = false;
    double stationarity_residual = 0.0;
    SelectedSet active_set;
    std::vector<std::string> warnings;

    double criterion() const { return criterion_trace.empty() ? kInf : criterion_trace.back(); }
};

/// A component's responsibility mass vanished; carries the iterate at which it happened.
class degenerate_component_error : public error
{
public:
    degenerate_component_error(Index component, double mass, MixtureParams theta)
        : error("degenerate_component",
                "component " + std::to_string(component + 1) + " collapsed (responsibility mass " +
                    std::to_string(mass) + ")"),
          component_(component), mass_(mass), theta_(std::move(theta))
    {}
    Index component() const noexcept { return component_; }
    double mass() const noexcept { return mass_; }
    const MixtureParams& theta() const noexcept { return theta_; }

private:
    Index component_;
    double mass_;
    MixtureParams theta_;
};

inline constexpr double kCollapseMass = 1e-10;

namespace detail {

// splitmix64 finalizer; derives independent sub-seeds from one user seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline double pi_power(double pi, double gamma)
{
    if (gamma == 0.0) return 1.0;
    if (gamma == 1.0) return pi;
    return std::sqrt(pi);
}

// sum_j w_rj |phi_rj| for each component, with 0 * inf = 0
inline Vector weighted_l1(const MixtureParams& theta, const PenaltySpec& pen)
{
    Vector out = Vector::Zero(theta.k());
    for (Index r = 0; r < theta.k(); ++r) {
        for (Index j = 0; j < theta.p(); ++j) {
            const double a = std::abs(theta.phi(r, j));
            if (a != 0.0) out(r) += pen.weight(r, j) * a;
        }
    }
    return out;
}

inline double max_relative_change(const MixtureParams& before, const MixtureParams& after)
{
    double m = 0.0;
    auto upd = [&m](double a, double b) { m = std::max(m, std::abs(b - a) / (1.0 + std::abs(b))); };
    for (Index i = 0; i < after.phi.size(); ++i) upd(before.phi.data()[i], after.phi.data()[i]);
    for (Index r = 0; r < after.k(); ++r) {
        upd(before.rho(r), after.rho(r));
        upd(before.pi(r), after.pi(r));
    }
    return m;
}

/**
 * Working state of one BCD-GEM run. Keeps eta = X phi^T (n x k) in sync with
 * theta so the E-step and the criterion never touch inactive coordinates.
 */
class GemState
{
public:
    GemState(const Dataset& data, const PenaltySpec& pen, MixtureParams theta)
        : data_(data), pen_(pen), theta_(std::move(theta))
    {
        refresh_eta();
        zero_col_.resize(static_cast<std::size_t>(data_.p()));
        for (Index j = 0; j < data_.p(); ++j) {
            zero_col_[static_cast<std::size_t>(j)] = data_.x.col(j).squaredNorm() == 0.0;
        }
    }

    const MixtureParams& theta() const { return theta_; }
    MixtureParams& theta() { return theta_; }

    // Recomputes eta from the nonzero coefficients only.
    void refresh_eta()
    {
        eta_.setZero(data_.n(), theta_.k());
        for (Index r = 0; r < theta_.k(); ++r) {
            for (Index j = 0; j < theta_.p(); ++j) {
                if (theta_.phi(r, j) != 0.0) eta_.col(r).noalias() += theta_.phi(r, j) * data_.x.col(j);
            }
        }
    }

    void e_step(Responsibilities& resp) const
    {
        const Index n = data_.n();
        const Index k = theta_.k();
        resp.r.resize(n, k);
        Vector base(k);
        for (Index r = 0; r < k; ++r) base(r) = std::log(theta_.pi(r)) + std::log(theta_.rho(r));
        for (Index i = 0; i < n; ++i) {
            double best = -kInf;
            for (Index r = 0; r < k; ++r) {
                const double z = theta_.rho(r) * data_.y(i) - eta_(i, r);
                const double a = base(r) - 0.5 * z * z;
                resp.r(i, r) = a;
                best = std::max(best, a);
            }
            double s = 0.0;
            for (Index r = 0; r < k; ++r) {
                const double e = std::exp(resp.r(i, r) - best);
                resp.r(i, r) = e;
                s += e;
            }
            resp.r.row(i) /= s;
        }
    }

    double criterion() const
    {
        const double penalty = penalty_value(theta_, pen_);
        if (std::isinf(penalty)) return kInf;
        return -loglik_eta(theta_, data_.y, eta_) / static_cast<double>(data_.n()) + penalty;
    }

    /**
     * Closed-form rho update followed by one coordinate pass over coords
     * for component r. theta().pi must already hold the updated proportions.
     */
    void update_component(Index r, const Eigen::Ref<const Vector>& w, std::span<const Index> coords)
    {
        const double n_r = w.sum();
        if (!(n_r >= kCollapseMass)) {
            throw degenerate_component_error(r, n_r, theta_);
        }
        const auto y = data_.y.array();
        auto eta_r = eta_.col(r);
        const double yy = (w.array() * y.square()).sum();
        const double yf = (w.array() * y * eta_r.array()).sum();
        const double rho = rho_closed_form(yf, yy, n_r);
        theta_.rho(r) = rho;

        const double base_threshold = static_cast<double>(data_.n()) * pen_.lambda *
                                      pi_power(theta_.pi(r), pen_.gamma);
        // weighted residual e = w .* (eta_r - rho y)
        resid_ = w.array() * (eta_r.array() - rho * y);
        for (Index j : coords) {
            const double old = theta_.phi(r, j);
            double updated = 0.0;
            if (!pen_.frozen(r, j)) {
                if (zero_col_[static_cast<std::size_t>(j)]) continue;
                const auto xj = data_.x.col(j);
                const double c = (w.array() * xj.array().square()).sum();
                if (!(c > 0.0)) continue;
                const double s = xj.dot(resid_) - old * c;
                updated = phi_coordinate_update(s, c, base_threshold * pen_.weight(r, j));
            }
            if (updated != old) {
                const double d = updated - old;
                const auto xj = data_.x.col(j);
                eta_r.noalias() += d * xj;
                resid_.array() += d * w.array() * xj.array();
                theta_.phi(r, j) = updated;
            }
        }
    }

    void coords_for(Index r, bool full, std::vector<Index>& out) const
    {
        out.clear();
        for (Index j = 0; j < data_.p(); ++j) {
            if (full || theta_.phi(r, j) != 0.0) out.push_back(j);
        }
    }

private:
    const Dataset& data_;
    const PenaltySpec& pen_;
    MixtureParams theta_;
    Matrix eta_;
    Vector resid_;
    std::vector<bool> zero_col_;
};

} // namespace detail

/// Posterior memberships at theta, computed with per-row max subtraction.
inline Responsibilities e_step(const MixtureParams& theta, const Dataset& data)
{
    theta.validate();
    detail::check_dims(theta, data);
    PenaltySpec none;
    detail::GemState state(data, none, theta);
    Responsibilities resp;
    state.e_step(resp);
    return resp;
}

/**
 * Objective of the pi update: -n^{-1} sum_i sum_r resp_ir log pi_r
 * + lambda sum_r pi_r^gamma sum_j w_rj |phi_rj| with phi held at theta.phi.
 */
inline double pi_objective(const Vector& pi, const Responsibilities& resp, const MixtureParams& theta,
                           const PenaltySpec& pen)
{
    const Vector mass = resp.r.colwise().sum().transpose();
    const Vector l1 = detail::weighted_l1(theta, pen);
    const double n = static_cast<double>(resp.n());
    double v = 0.0;
    for (Index r = 0; r < pi.size(); ++r) {
        if (mass(r) > 0.0) v -= mass(r) * std::log(pi(r)) / n;
        if (l1(r) > 0.0) v += pen.lambda * detail::pi_power(pi(r), pen.gamma) * l1(r);
    }
    return v;
}

/**
 * Improves the mixing proportions. With gamma = 0 the column means of resp
 * are the exact minimizer. Otherwise steps toward them with the largest
 * t in {1, delta, ..., delta^20} that does not increase pi_objective;
 * keeps the current pi if none qualifies.
 */
inline Vector m_step_pi(const Responsibilities& resp, const MixtureParams& theta, const PenaltySpec& pen,
                        double delta)
{
    if (resp.k() != theta.k()) {
        throw invalid_argument_error("m_step_pi: responsibilities and parameters disagree on k");
    }
    if (!(delta > 0.0 && delta < 1.0)) {
        throw invalid_argument_error("m_step_pi: delta must lie in (0, 1)");
    }
    Vector target = resp.r.colwise().mean().transpose();
    target /= target.sum();
    if (pen.gamma == 0.0 || pen.lambda == 0.0) return target;

    const double current = pi_objective(theta.pi, resp, theta, pen);
    double t = 1.0;
    for (int step = 0; step <= 20; ++step, t *= delta) {
        Vector cand = theta.pi + t * (target - theta.pi);
        cand /= cand.sum();
        if (pi_objective(cand, resp, theta, pen) <= current) return cand;
    }
    return theta.pi;
}

/// Updated (rho_r, phi_r) for one component.
struct ComponentStep
{
    double rho;
    Vector phi;
};

/**
 * One generalized M-step for component r on the weighted data
 * (sqrt(resp_ir) y_i, sqrt(resp_ir) x_i): closed-form rho, then a single
 * soft-thresholding pass over coords. theta.pi is taken as the already
 * updated proportions.
 */
inline ComponentStep m_step_component(Index r, const Responsibilities& resp, const MixtureParams& theta,
                                      const Dataset& data, const PenaltySpec& pen, std::span<const Index> coords)
{
    pen.validate();
    detail::check_dims(theta, data);
    if (r < 0 || r >= theta.k() || resp.k() != theta.k() || resp.n() != data.n()) {
        throw invalid_argument_error("m_step_component: dimension mismatch");
    }
    for (Index j : coords) {
        if (j < 0 || j >= data.p()) throw invalid_argument_error("m_step_component: coordinate out of range");
    }
    detail::GemState state(data, pen, theta);
    state.update_component(r, resp.r.col(r), coords);
    return {state.theta().rho(r), state.theta().phi.row(r).transpose()};
}

/**
 * Random starting memberships: each row puts weight 0.9 on a uniformly drawn
 * class and 0.1 on the others, then is normalized.
 */
inline Responsibilities init_responsibilities(Index n, Index k, std::uint64_t seed)
{
    if (n < 1 || k < 1) throw invalid_argument_error("init_responsibilities: n and k must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> draw(0, k - 1);
    Responsibilities resp;
    resp.r.resize(n, k);
    const double norm = 0.9 + 0.1 * static_cast<double>(k - 1);
    for (Index i = 0; i < n; ++i) {
        const Index kappa = draw(rng);
        resp.r.row(i).setConstant(0.1 / norm);
        resp.r(i, kappa) = 0.9 / norm;
    }
    return resp;
}

/// Whether EM iteration `iteration` visits every coordinate (true) or only the active set.
inline bool active_set_schedule(int iteration, int period)
{
    if (period < 1) throw invalid_argument_error("active_set_schedule: period must be >= 1");
    return iteration % period == 0;
}

namespace detail {

inline void m_step(GemState& state, const Responsibilities& resp, const PenaltySpec& pen, double delta, bool full,
                   std::vector<Index>& coords)
{
    state.theta().pi = m_step_pi(resp, state.theta(), pen, delta);
    for (Index r = 0; r < state.theta().k(); ++r) {
        state.coords_for(r, full, coords);
        state.update_component(r, resp.r.col(r), coords);
    }
}

inline void relabel_by_pi(MixtureParams& theta)
{
    std::vector<Index> order(static_cast<std::size_t>(theta.k()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return theta.pi(a) > theta.pi(b); });
    MixtureParams out = theta;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Index src = order[i];
        out.phi.row(static_cast<Index>(i)) = theta.phi.row(src);
        out.rho(static_cast<Index>(i)) = theta.rho(src);
        out.pi(static_cast<Index>(i)) = theta.pi(src);
    }
    theta = std::move(out);
}

} // namespace detail

/// Result of one extra full E/M cycle from a fitted parameter.
struct StationarityReport
{
    double residual = 0.0; // max relative coordinate change + criterion decrease
    bool heuristic = false; // gamma != 0: no stationarity guarantee applies
};

inline StationarityReport stationarity_check(const MixtureParams& theta, const Dataset& data, const PenaltySpec& pen,
                                             double delta = 0.1)
{
    pen.validate();
    theta.validate();
    detail::check_dims(theta, data);
    detail::GemState state(data, pen, theta);
    const double before = state.criterion();
    Responsibilities resp;
    state.e_step(resp);
    std::vector<Index> coords;
    detail::m_step(state, resp, pen, delta, true, coords);
    const double after = state.criterion();
    StationarityReport rep;
    rep.heuristic = pen.gamma != 0.0;
    rep.residual = detail::max_relative_change(theta, state.theta()) + std::max(0.0, before - after);
    return rep;
}

inline StationarityReport stationarity_check(const FitResult& fit, const Dataset& data, const PenaltySpec& pen,
                                             double delta = 0.1)
{
    return stationarity_check(fit.theta, data, pen, delta);
}

namespace detail {

inline FitResult fit_bcd_gem_single(const Dataset& data, Index k, const PenaltySpec& pen, const OptimOptions& opts,
                                    const std::optional<MixtureParams>& start, std::uint64_t seed)
{
    FitResult res;
    res.penalty = pen;
    res.warnings = dataset_warnings(data);

    MixtureParams theta0;
    Responsibilities resp;
    if (start) {
        theta0 = *start;
        if (pen.weights) {
            for (Index r = 0; r < theta0.k(); ++r)
                for (Index j = 0; j < theta0.p(); ++j)
                    if (pen.frozen(r, j)) theta0.phi(r, j) = 0.0;
        }
    } else {
        theta0.phi = Matrix::Zero(k, data.p());
        theta0.rho = Vector::Constant(k, 2.0);
        theta0.pi = Vector::Constant(k, 1.0 / static_cast<double>(k));
        resp = init_responsibilities(data.n(), k, seed);
    }

    GemState state(data, pen, theta0);
    if (start) state.e_step(resp);
    std::vector<Index> coords;
    m_step(state, resp, pen, opts.delta, true, coords);
    res.criterion_trace.push_back(state.criterion());

    const double sqrt_tau = std::sqrt(opts.tau);
    bool force_full = false;
    int iter = 1;
    for (; iter < opts.max_iter; ++iter) {
        const bool full = force_full || active_set_schedule(iter, opts.active_set_period);
        const MixtureParams prev = state.theta();
        const double prev_crit = res.criterion_trace.back();
        state.e_step(resp);
        m_step(state, resp, pen, opts.delta, full, coords);
        if (iter % 50 == 0) state.refresh_eta();
        const double crit = state.criterion();
        res.criterion_trace.push_back(crit);

        const bool small_f = std::abs(crit - prev_crit) / (1.0 + std::abs(crit)) <= opts.tau;
        const bool small_x = max_relative_change(prev, state.theta()) <= sqrt_tau;
        if (small_f && small_x) {
            // a restricted sweep cannot see coordinates about to enter; confirm with a full one
            if (full) {
                res.converged = true;
                ++iter;
                break;
            }
            force_full = true;
        } else {
            force_full = false;
        }
    }
    res.n_iterations = iter;
    res.theta = state.theta();
    return res;
}

} // namespace detail

/**
 * Block coordinate descent generalized EM for the l1-penalized mixture of
 * Gaussian regressions.
 *
 * Without a start value the run begins with random memberships
 * (init_responsibilities) and one full M-step from phi = 0, rho = 2,
 * pi = 1/k. With a start value the first iteration is an E-step at it.
 * Each iteration is E-step, pi update, then per component rho and one
 * coordinate pass over phi; between full sweeps the pass is restricted to
 * the nonzero coordinates. Stops when the relative criterion change is
 * below tau and the largest relative parameter change is below sqrt(tau),
 * with the last iteration a full sweep.
 *
 * Components are returned in decreasing-pi order unless adaptive weights
 * are present (their rows are tied to the component labels).
 */
inline FitResult fit_bcd_gem(const Dataset& data, Index k, const PenaltySpec& pen, const OptimOptions& opts,
                             const std::optional<MixtureParams>& start = std::nullopt)
{
    pen.validate();
    opts.validate();
    if (k < 1) throw invalid_argument_error("fit_bcd_gem: k must be >= 1");
    if (pen.weights && (pen.weights->rows() != k || pen.weights->cols() != data.p())) {
        throw invalid_argument_error("fit_bcd_gem: weights must be k x p");
    }
    if (start) {
        start->validate();
        detail::check_dims(*start, data);
        if (start->k() != k) throw invalid_argument_error("fit_bcd_gem: start value has wrong k");
    }
    if (!(data.y.squaredNorm() > 0.0)) {
        throw invalid_argument_error("fit_bcd_gem: response vector is identically zero");
    }

    std::optional<FitResult> best;
    std::optional<degenerate_component_error> last_error;
    const int starts = start ? 1 : opts.n_starts;
    for (int s = 0; s < starts; ++s) {
        const std::uint64_t seed = s == 0 ? opts.seed : detail::mix_seed(opts.seed, static_cast<std::uint64_t>(s));
        try {
            FitResult fit = detail::fit_bcd_gem_single(data, k, pen, opts, start, seed);
            if (!best || fit.criterion() < best->criterion()) best = std::move(fit);
        } catch (const degenerate_component_error& e) {
            last_error = e;
        }
    }
    if (!best) throw *last_error;

    FitResult& out = *best;
    if (!pen.weights) detail::relabel_by_pi(out.theta);
    out.active_set = selected_set(out.theta);
    out.stationarity_residual = stationarity_check(out.theta, data, pen, opts.delta).residual;
    return out;
}

} // namespace fmrlasso

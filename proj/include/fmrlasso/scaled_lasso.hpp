#pragma once
#include <cmath>
#include <optional>
#include <vector>
#include <fmrlasso/core_model.hpp>
#include <fmrlasso/options.hpp>

namespace fmrlasso {

/**
 * Solution of the one-component problem
 *
 *      min_{phi, rho > 0}  -log(rho) + ||rho Y - X phi||^2 / (2n) + lambda ||phi||_1,
 *
 * which is jointly convex in (phi, rho).
 */
struct ScaledLassoFit
{
    Vector phi;
    double rho = 1.0;
    double criterion = 0.0;
    double kkt_residual = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> criterion_trace; // value after each sweep
};

/// Minimizer over rho of -n_r log(rho) + ||rho y - f||^2 / 2 given <y,f> and ||y||^2.
inline double rho_closed_form(double y_dot_fitted, double y_norm_sq, double n_r)
{
    if (!(y_norm_sq > 0.0)) {
        throw invalid_argument_error("rho_closed_form: response must not be identically zero");
    }
    return (y_dot_fitted + std::sqrt(y_dot_fitted * y_dot_fitted + 4.0 * y_norm_sq * n_r)) /
           (2.0 * y_norm_sq);
}

inline double rho_closed_form(const Eigen::Ref<const Vector>& y_tilde,
                              const Eigen::Ref<const Vector>& fitted, double n_r)
{
    if (y_tilde.size() != fitted.size()) {
        throw invalid_argument_error("rho_closed_form: length mismatch");
    }
    return rho_closed_form(y_tilde.dot(fitted), y_tilde.squaredNorm(), n_r);
}

/**
 * Minimizer of 0.5 * a * z^2 + s * z + threshold * |z| (a = col_norm_sq > 0).
 * Ties |s| == threshold map to zero.
 */
inline double phi_coordinate_update(double s, double col_norm_sq, double threshold)
{
    if (s > threshold) return (threshold - s) / col_norm_sq;
    if (s < -threshold) return -(threshold + s) / col_norm_sq;
    return 0.0;
}

/// Smallest lambda at which the one-component solution is entirely zero.
inline double lambda_max(const Dataset& data)
{
    const double ynorm = data.y.norm();
    if (!(ynorm > 0.0)) {
        throw invalid_argument_error("lambda_max: response vector is identically zero");
    }
    const Vector xy = data.x.transpose() * data.y;
    return xy.cwiseAbs().maxCoeff() / (std::sqrt(static_cast<double>(data.n())) * ynorm);
}

inline double scaled_lasso_criterion(const Eigen::Ref<const Vector>& phi, double rho,
                                     const Dataset& data, double lambda)
{
    const double n = static_cast<double>(data.n());
    return -std::log(rho) + (rho * data.y - data.x * phi).squaredNorm() / (2.0 * n) +
           lambda * phi.lpNorm<1>();
}

namespace detail {

inline double scaled_lasso_kkt(const Vector& phi, double rho, const Dataset& data, double lambda)
{
    const double n = static_cast<double>(data.n());
    const Vector eta = data.x * phi;
    const Vector grad = data.x.transpose() * (eta - rho * data.y);
    const double nl = n * lambda;
    double worst = 0.0;
    for (Index j = 0; j < data.p(); ++j) {
        if (data.x.col(j).squaredNorm() == 0.0) continue;
        double v;
        if (phi(j) != 0.0) {
            v = std::abs(grad(j) + nl * (phi(j) > 0.0 ? 1.0 : -1.0));
        } else {
            v = std::max(0.0, std::abs(grad(j)) - nl);
        }
        worst = std::max(worst, v);
    }
    const double rho_res = std::abs(-n / rho + rho * data.y.squaredNorm() - data.y.dot(eta));
    return std::max(worst, rho_res);
}

} // namespace detail

/// Largest violation of the optimality conditions at (fit.phi, fit.rho).
inline double kkt_check(const ScaledLassoFit& fit, const Dataset& data, double lambda)
{
    if (fit.phi.size() != data.p()) {
        throw invalid_argument_error("kkt_check: fit dimension does not match data");
    }
    return detail::scaled_lasso_kkt(fit.phi, fit.rho, data, lambda);
}

/**
 * Cyclic coordinate descent: rho first, then phi_1..phi_p each sweep, until
 * the KKT residual drops below opts.kkt_tol. Optional warm start for phi.
 */
inline ScaledLassoFit fit_scaled_lasso(const Dataset& data, double lambda, const OptimOptions& opts,
                                       const std::optional<Vector>& warm_phi = std::nullopt)
{
    opts.validate();
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw invalid_argument_error("fit_scaled_lasso: lambda must be finite and nonnegative");
    }
    const Index p = data.p();
    const double n = static_cast<double>(data.n());
    const double yy = data.y.squaredNorm();
    if (!(yy > 0.0)) {
        throw invalid_argument_error("fit_scaled_lasso: response vector is identically zero");
    }
    const Vector col_sq = data.x.colwise().squaredNorm().transpose();
    const Vector xy = data.x.transpose() * data.y;
    const double threshold = n * lambda;

    ScaledLassoFit fit;
    fit.phi = warm_phi ? *warm_phi : Vector::Zero(p);
    if (fit.phi.size() != p) {
        throw invalid_argument_error("fit_scaled_lasso: warm start has wrong length");
    }
    Vector eta = data.x * fit.phi;

    for (int sweep = 1; sweep <= opts.max_iter; ++sweep) {
        fit.rho = rho_closed_form(data.y.dot(eta), yy, n);
        for (Index j = 0; j < p; ++j) {
            if (col_sq(j) == 0.0) continue;
            const double old = fit.phi(j);
            const double s = -fit.rho * xy(j) + data.x.col(j).dot(eta) - old * col_sq(j);
            const double updated = phi_coordinate_update(s, col_sq(j), threshold);
            if (updated != old) {
                eta.noalias() += (updated - old) * data.x.col(j);
                fit.phi(j) = updated;
            }
        }
        eta.noalias() = data.x * fit.phi; // drop accumulated rounding
        fit.iterations = sweep;
        fit.criterion = -std::log(fit.rho) + (fit.rho * data.y - eta).squaredNorm() / (2.0 * n) +
                        lambda * fit.phi.lpNorm<1>();
        fit.criterion_trace.push_back(fit.criterion);
        fit.kkt_residual = detail::scaled_lasso_kkt(fit.phi, fit.rho, data, lambda);
        if (fit.kkt_residual <= opts.kkt_tol) {
            fit.converged = true;
            break;
        }
    }
    return fit;
}

/// Fits along a lambda path in descending order, each fit warm-started from the previous one.
/// Results are returned in the order of the input lambdas.
inline std::vector<ScaledLassoFit> scaled_lasso_path(const Dataset& data, const std::vector<double>& lambdas,
                                                     const OptimOptions& opts)
{
    std::vector<std::size_t> order(lambdas.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lambdas[a] > lambdas[b]; });
    std::vector<ScaledLassoFit> out(lambdas.size());
    std::optional<Vector> warm;
    for (std::size_t idx : order) {
        out[idx] = fit_scaled_lasso(data, lambdas[idx], opts, warm);
        warm = out[idx].phi;
    }
    return out;
}

} // namespace fmrlasso

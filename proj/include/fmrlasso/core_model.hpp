#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>
#include <Eigen/Dense>
#include <fmrlasso/errors.hpp>

namespace fmrlasso {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kHalfLog2Pi = 0.91893853320467274178; // 0.5 * log(2 pi)
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/**
 * Mixture parameters on the original scale: per-component regression
 * coefficients (rows of beta), standard deviations and mixing proportions.
 */
struct NaturalParams
{
    Matrix beta;  // k x p
    Vector sigma; // k
    Vector pi;    // k, sums to one

    Index k() const { return beta.rows(); }
    Index p() const { return beta.cols(); }
};

namespace detail {

inline void check_simplex(const Vector& pi, const char* who)
{
    if (pi.size() == 0) {
        throw invalid_argument_error(std::string(who) + ": empty mixing proportions");
    }
    for (Index r = 0; r < pi.size(); ++r) {
        if (!(pi(r) > 0.0) || !std::isfinite(pi(r))) {
            throw invalid_argument_error(std::string(who) + ": mixing proportions must be positive");
        }
    }
    if (std::abs(pi.sum() - 1.0) > 1e-12) {
        throw invalid_argument_error(std::string(who) + ": mixing proportions must sum to one");
    }
}

inline void check_positive(const Vector& v, const char* who, const char* name)
{
    for (Index r = 0; r < v.size(); ++r) {
        if (!(v(r) > 0.0) || !std::isfinite(v(r))) {
            throw invalid_argument_error(std::string(who) + ": " + name + " must be positive and finite");
        }
    }
}

} // namespace detail

/**
 * Working parameter of the reparameterized model:
 * phi_r = beta_r / sigma_r, rho_r = 1 / sigma_r.
 *
 * All k mixing proportions are stored; callers renormalize after updates.
 */
struct MixtureParams
{
    Matrix phi; // k x p
    Vector rho; // k
    Vector pi;  // k

    Index k() const { return phi.rows(); }
    Index p() const { return phi.cols(); }

    void validate() const
    {
        if (phi.rows() == 0 || rho.size() != phi.rows() || pi.size() != phi.rows()) {
            throw invalid_argument_error("MixtureParams: inconsistent component count");
        }
        if (!phi.allFinite()) {
            throw invalid_argument_error("MixtureParams: non-finite coefficient");
        }
        detail::check_positive(rho, "MixtureParams", "rho");
        detail::check_simplex(pi, "MixtureParams");
    }

    static MixtureParams from_natural(const NaturalParams& nat)
    {
        detail::check_positive(nat.sigma, "NaturalParams", "sigma");
        detail::check_simplex(nat.pi, "NaturalParams");
        MixtureParams out;
        out.rho = nat.sigma.cwiseInverse();
        out.phi = out.rho.asDiagonal() * nat.beta;
        out.pi = nat.pi;
        return out;
    }

    // sigma = 1 / rho unconditionally; a huge rho signals a degenerate component.
    NaturalParams to_natural() const
    {
        NaturalParams out;
        out.sigma = rho.cwiseInverse();
        out.beta = out.sigma.asDiagonal() * phi;
        out.pi = pi;
        return out;
    }
};

/// Fixed design plus response.
struct Dataset
{
    Matrix x; // n x p
    Vector y; // n
    std::vector<std::string> column_names;

    Dataset() = default;

    Dataset(Matrix x_, Vector y_, std::vector<std::string> names = {})
        : x(std::move(x_)), y(std::move(y_)), column_names(std::move(names))
    {
        if (x.rows() < 1 || x.cols() < 1) {
            throw invalid_argument_error("Dataset: need n >= 1 and p >= 1");
        }
        if (y.size() != x.rows()) {
            throw invalid_argument_error("Dataset: response length does not match design rows");
        }
        if (!x.allFinite() || !y.allFinite()) {
            throw invalid_argument_error("Dataset: non-finite entries");
        }
        if (column_names.empty()) {
            for (Index j = 0; j < x.cols(); ++j) {
                column_names.push_back("x" + std::to_string(j + 1));
            }
        }
        if (static_cast<Index>(column_names.size()) != x.cols()) {
            throw invalid_argument_error("Dataset: column name count does not match design columns");
        }
    }

    Index n() const { return x.rows(); }
    Index p() const { return x.cols(); }

    bool has_zero_response() const { return (y.array() == 0.0).any(); }

    Dataset rows(std::span<const Index> idx) const
    {
        Matrix xs(static_cast<Index>(idx.size()), p());
        Vector ys(static_cast<Index>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            xs.row(static_cast<Index>(i)) = x.row(idx[i]);
            ys(static_cast<Index>(i)) = y(idx[i]);
        }
        return Dataset(std::move(xs), std::move(ys), column_names);
    }
};

/// Non-fatal diagnostics about a dataset.
inline std::vector<std::string> dataset_warnings(const Dataset& data)
{
    std::vector<std::string> out;
    for (Index i = 0; i < data.n(); ++i) {
        if (data.y(i) == 0.0) {
            out.push_back("response is zero at row " + std::to_string(i + 1) +
                          "; the penalized criterion is only guaranteed bounded from below "
                          "when every response is nonzero");
            break;
        }
    }
    for (Index j = 0; j < data.p(); ++j) {
        if ((data.x.col(j).array() == 0.0).all()) {
            out.push_back("column '" + data.column_names[static_cast<std::size_t>(j)] +
                          "' is identically zero and is excluded from coordinate updates");
        }
    }
    return out;
}

/**
 * Penalty configuration. gamma is the exponent on pi_r in the penalty and
 * must be exactly 0, 0.5 or 1. weights (k x p) are adaptive weights; +inf
 * freezes a coefficient at zero.
 */
struct PenaltySpec
{
    double lambda = 0.0;
    double gamma = 1.0;
    std::optional<Matrix> weights;

    void validate() const
    {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
            throw invalid_argument_error("PenaltySpec: lambda must be finite and nonnegative");
        }
        if (gamma != 0.0 && gamma != 0.5 && gamma != 1.0) {
            throw invalid_argument_error("PenaltySpec: gamma must be one of 0, 0.5, 1");
        }
        if (weights) {
            for (Index i = 0; i < weights->size(); ++i) {
                double w = weights->data()[i];
                if (std::isnan(w) || w < 0.0) {
                    throw invalid_argument_error("PenaltySpec: weights must be >= 0 (inf allowed)");
                }
            }
        }
    }

    double weight(Index r, Index j) const { return weights ? (*weights)(r, j) : 1.0; }

    bool frozen(Index r, Index j) const { return weights && std::isinf((*weights)(r, j)); }
};

/// (component, covariate) pairs with a nonzero coefficient, zero-based.
struct SelectedSet
{
    std::vector<std::pair<Index, Index>> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }

    bool contains(Index r, Index j) const
    {
        return std::find(entries.begin(), entries.end(), std::make_pair(r, j)) != entries.end();
    }

    // Covariates selected in at least one component, sorted.
    std::vector<Index> covariates() const
    {
        std::vector<Index> out;
        for (const auto& e : entries) out.push_back(e.second);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }
};

namespace detail {

inline void check_dims(const MixtureParams& theta, const Dataset& data)
{
    if (theta.p() != data.p()) {
        throw invalid_argument_error("parameter dimension does not match design columns");
    }
}

/// log sum_r pi_r rho_r / sqrt(2 pi) exp(-0.5 (rho_r y - eta_r)^2), eta_r = x' phi_r.
template <class EtaRow>
double log_density_eta(const MixtureParams& theta, double y, const EtaRow& eta)
{
    const Index k = theta.k();
    double best = -kInf;
    double terms[16];
    std::vector<double> heap;
    double* a = terms;
    if (k > 16) {
        heap.resize(static_cast<std::size_t>(k));
        a = heap.data();
    }
    for (Index r = 0; r < k; ++r) {
        const double z = theta.rho(r) * y - eta(r);
        a[r] = std::log(theta.pi(r)) + std::log(theta.rho(r)) - 0.5 * z * z;
        best = std::max(best, a[r]);
    }
    if (!std::isfinite(best)) return best - kHalfLog2Pi;
    double s = 0.0;
    for (Index r = 0; r < k; ++r) s += std::exp(a[r] - best);
    return best + std::log(s) - kHalfLog2Pi;
}

/// Unscaled log-likelihood from precomputed linear predictors eta = X phi^T (n x k).
inline double loglik_eta(const MixtureParams& theta, const Vector& y, const Matrix& eta)
{
    double ll = 0.0;
    for (Index i = 0; i < y.size(); ++i) {
        ll += log_density_eta(theta, y(i), eta.row(i));
    }
    return ll;
}

inline double penalty_value(const MixtureParams& theta, const PenaltySpec& pen)
{
    if (pen.lambda == 0.0) {
        // frozen coordinates must still be zero
        if (pen.weights) {
            for (Index r = 0; r < theta.k(); ++r)
                for (Index j = 0; j < theta.p(); ++j)
                    if (pen.frozen(r, j) && theta.phi(r, j) != 0.0) return kInf;
        }
        return 0.0;
    }
    double total = 0.0;
    for (Index r = 0; r < theta.k(); ++r) {
        double row = 0.0;
        for (Index j = 0; j < theta.p(); ++j) {
            const double a = std::abs(theta.phi(r, j));
            if (a == 0.0) continue; // 0 * inf = 0
            const double w = pen.weight(r, j);
            if (std::isinf(w)) return kInf;
            row += w * a;
        }
        total += (pen.gamma == 0.0 ? 1.0 : std::pow(theta.pi(r), pen.gamma)) * row;
    }
    return pen.lambda * total;
}

} // namespace detail

/// Log of the mixture density h_theta(y | x), evaluated with log-sum-exp.
inline double log_density(const MixtureParams& theta, const Eigen::Ref<const Vector>& x, double y)
{
    if (!x.allFinite() || !std::isfinite(y)) {
        throw invalid_argument_error("log_density: non-finite input");
    }
    if (x.size() != theta.p()) {
        throw invalid_argument_error("log_density: covariate length does not match parameters");
    }
    const Vector eta = theta.phi * x;
    return detail::log_density_eta(theta, y, eta);
}

/// Unscaled log-likelihood sum_i log h_theta(y_i | x_i).
inline double log_likelihood(const MixtureParams& theta, const Dataset& data)
{
    detail::check_dims(theta, data);
    const Matrix eta = data.x * theta.phi.transpose();
    return detail::loglik_eta(theta, data.y, eta);
}

/// -n^{-1} times the log-likelihood.
inline double neg_log_likelihood(const MixtureParams& theta, const Dataset& data)
{
    return -log_likelihood(theta, data) / static_cast<double>(data.n());
}

/**
 * Scaled negative log-likelihood plus
 * lambda * sum_r pi_r^gamma * sum_j w_rj |phi_rj|.
 * Returns +inf if a frozen (w = inf) coefficient is nonzero.
 */
inline double penalized_nll(const MixtureParams& theta, const Dataset& data, const PenaltySpec& pen)
{
    pen.validate();
    const double penalty = detail::penalty_value(theta, pen);
    if (std::isinf(penalty)) return kInf;
    return neg_log_likelihood(theta, data) + penalty;
}

/**
 * Evaluates both sides of the response-scaling identity: the criterion on
 * (bY, X) at rho / b, and the criterion on (Y, X) at rho plus log b.
 */
inline std::pair<double, double> scale_shift_identity_check(const MixtureParams& theta,
                                                            const Dataset& data,
                                                            const PenaltySpec& pen, double b)
{
    if (!(b > 0.0) || !std::isfinite(b)) {
        throw invalid_argument_error("scale_shift_identity_check: b must be positive");
    }
    MixtureParams scaled = theta;
    scaled.rho = theta.rho / b;
    Dataset scaled_data = data;
    scaled_data.y = b * data.y;
    return {penalized_nll(scaled, scaled_data, pen), penalized_nll(theta, data, pen) + std::log(b)};
}

inline SelectedSet selected_set(const MixtureParams& theta, double tol = 0.0)
{
    if (!(tol >= 0.0)) {
        throw invalid_argument_error("selected_set: tol must be nonnegative");
    }
    SelectedSet out;
    for (Index r = 0; r < theta.k(); ++r) {
        for (Index j = 0; j < theta.p(); ++j) {
            if (std::abs(theta.phi(r, j)) > tol) out.entries.emplace_back(r, j);
        }
    }
    return out;
}

/**
 * Signal-to-noise ratio Var(Y) / Var(Y | beta = 0) for a mixture with
 * zero-mean covariates of covariance cov.
 */
inline double snr(const Matrix& beta, const Vector& sigma, const Vector& pi, const Matrix& cov)
{
    if (cov.rows() != beta.cols() || cov.cols() != beta.cols()) {
        throw invalid_argument_error("snr: covariance dimension does not match coefficients");
    }
    double num = 0.0;
    double den = 0.0;
    for (Index r = 0; r < beta.rows(); ++r) {
        const Vector b = beta.row(r).transpose();
        const double s2 = sigma(r) * sigma(r);
        num += pi(r) * (b.dot(cov * b) + s2);
        den += pi(r) * s2;
    }
    return num / den;
}

} // namespace fmrlasso

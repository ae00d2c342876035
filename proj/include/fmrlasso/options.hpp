#pragma once
#include <cstdint>
#include <fmrlasso/errors.hpp>

namespace fmrlasso {

/// Optimizer settings shared by the scaled Lasso and the mixture solver.
struct OptimOptions
{
    double tau = 1e-6;           // relative stopping tolerance (EM)
    int max_iter = 10000;        // EM iterations, or coordinate sweeps for the scaled Lasso
    double delta = 0.1;          // base of the step grid for the pi update
    int active_set_period = 11;  // full sweep every period-th iteration; 1 disables the active set
    std::uint64_t seed = 0;      // initialization RNG
    double kkt_tol = 1e-6;       // scaled Lasso stopping tolerance
    int n_starts = 1;            // random restarts, best criterion kept

    void validate() const
    {
        if (!(tau > 0.0)) throw invalid_argument_error("OptimOptions: tau must be positive");
        if (!(delta > 0.0 && delta < 1.0)) throw invalid_argument_error("OptimOptions: delta must lie in (0, 1)");
        if (max_iter < 1) throw invalid_argument_error("OptimOptions: max_iter must be >= 1");
        if (active_set_period < 1) throw invalid_argument_error("OptimOptions: active_set_period must be >= 1");
        if (!(kkt_tol > 0.0)) throw invalid_argument_error("OptimOptions: kkt_tol must be positive");
        if (n_starts < 1) throw invalid_argument_error("OptimOptions: n_starts must be >= 1");
    }
};

} // namespace fmrlasso

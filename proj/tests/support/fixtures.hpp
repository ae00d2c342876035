#pragma once
#include <cstdint>
#include <random>
#include <fmrlasso/core_model.hpp>
#include "oracles.hpp"

namespace fixtures {

using namespace fmrlasso;

inline Dataset dataset(const oracle::Instance& in) { return Dataset(in.x, in.y); }

/// Random valid parameters: phi ~ N(0, scale^2), rho in [0.2, 5], pi from normalized uniforms.
inline MixtureParams random_theta(std::mt19937_64& rng, Index k, Index p, double scale = 1.0)
{
    std::normal_distribution<double> z(0.0, scale);
    std::uniform_real_distribution<double> u(0.2, 5.0), w(0.05, 1.0);
    MixtureParams t;
    t.phi.resize(k, p);
    t.rho.resize(k);
    t.pi.resize(k);
    for (Index r = 0; r < k; ++r) {
        for (Index j = 0; j < p; ++j) t.phi(r, j) = z(rng);
        t.rho(r) = u(rng);
        t.pi(r) = w(rng);
    }
    t.pi /= t.pi.sum();
    return t;
}

inline MixtureParams make_theta(Matrix phi, Vector rho, Vector pi) { return MixtureParams{std::move(phi), std::move(rho), std::move(pi)}; }

} // namespace fixtures

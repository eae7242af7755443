#pragma once
// Strong-error study on the scalar Ornstein-Uhlenbeck process dy = -θy dt + σ dW.
// Reference paths use a hand-written scalar Taylor 1.5 recursion on a fine grid;
// coarse increments (Δw, Δz) are aggregated exactly from the fine ones.

#include "dtwin/sde.hpp"
#include "dtwin/state_space.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace oracle {

inline dtwin::StateSpaceModel ou_model(double theta, double sigma) {
    dtwin::StateSpaceModel m;
    m.dim = 1;
    m.noise_dim = 1;
    m.drift = [theta](const dtwin::Vector& y, const dtwin::Vector&) { return dtwin::Vector(-theta * y); };
    m.drift_jacobian = [theta](const dtwin::Vector&) { return dtwin::Matrix::Constant(1, 1, -theta); };
    m.dispersion = [sigma](const dtwin::Vector&) { return dtwin::Matrix::Constant(1, 1, sigma); };
    return m;
}

struct StrongErrors {
    std::vector<double> dts;
    std::vector<double> em;      // mean |y_dt(T) − y_ref(T)|
    std::vector<double> taylor;
    std::vector<double> em_taylor_gap;  // mean |y_em − y_taylor|
};

inline StrongErrors ou_strong_errors(const std::vector<double>& dts, int paths, double fine_dt, double horizon,
                                     std::uint64_t seed, double theta = 1.0, double sigma = 1.0, double y0 = 1.0) {
    const auto model = ou_model(theta, sigma);
    const auto n_fine = static_cast<std::size_t>(std::llround(horizon / fine_dt));
    StrongErrors out;
    out.dts = dts;
    out.em.assign(dts.size(), 0.0);
    out.taylor.assign(dts.size(), 0.0);
    out.em_taylor_gap.assign(dts.size(), 0.0);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> dw(n_fine), dz(n_fine);
    const double sh = std::sqrt(fine_dt);
    for (int p = 0; p < paths; ++p) {
        for (std::size_t i = 0; i < n_fine; ++i) {
            const double u1 = normal(rng), u2 = normal(rng);
            dw[i] = sh * u1;
            dz[i] = 0.5 * fine_dt * sh * (u1 + u2 / std::sqrt(3.0));
        }
        double ref = y0;
        for (std::size_t i = 0; i < n_fine; ++i) {
            const double a = -theta * ref;
            ref += a * fine_dt + sigma * dw[i] - theta * sigma * dz[i] + 0.5 * (-theta * a) * fine_dt * fine_dt;
        }
        for (std::size_t d = 0; d < dts.size(); ++d) {
            const auto ratio = static_cast<std::size_t>(std::llround(dts[d] / fine_dt));
            dtwin::Vector em = dtwin::Vector::Constant(1, y0), ty = em;
            const dtwin::Vector u = dtwin::Vector::Zero(1);
            for (std::size_t start = 0; start + ratio <= n_fine; start += ratio) {
                double w = 0.0, z = 0.0;
                for (std::size_t i = start; i < start + ratio; ++i) {
                    z += w * fine_dt + dz[i];
                    w += dw[i];
                }
                dtwin::BrownianIncrementPair inc{dtwin::Vector::Constant(1, w), dtwin::Vector::Constant(1, z)};
                em = dtwin::em_step(model, em, u, inc.dw, dts[d]);
                ty = dtwin::taylor15_step(model, ty, u, inc, dts[d]);
            }
            out.em[d] += std::abs(em(0) - ref) / paths;
            out.taylor[d] += std::abs(ty(0) - ref) / paths;
            out.em_taylor_gap[d] += std::abs(em(0) - ty(0)) / paths;
        }
    }
    return out;
}

/// Least-squares slope of log(err) against log(dt).
inline double loglog_slope(const std::vector<double>& dts, const std::vector<double>& err) {
    const auto n = static_cast<double>(dts.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < dts.size(); ++i) {
        const double x = std::log(dts[i]), y = std::log(err[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace oracle

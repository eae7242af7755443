#pragma once

// Euler-Maruyama and Taylor 1.5 strong integration of dy = a dt + b dW,
// Brownian increment generation and SNR-calibrated measurement noise.

#include "dtwin/common.hpp"
#include "dtwin/model.hpp"
#include "dtwin/state_space.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dtwin {

enum class Scheme { euler_maruyama, taylor15 };

inline std::string to_string(Scheme s) {
    return s == Scheme::euler_maruyama ? "euler-maruyama" : "taylor15";
}

inline Scheme scheme_from_string(const std::string& s) {
    if (s == "euler-maruyama" || s == "em") return Scheme::euler_maruyama;
    if (s == "taylor15" || s == "taylor-1.5") return Scheme::taylor15;
    throw InvalidParameter("unknown integration scheme '" + s + "'");
}

struct IntegratorConfig {
    double dt = 1e-3;  // s
    Scheme scheme = Scheme::taylor15;
    std::uint64_t seed = 0;
};

/// Δw ~ N(0, Δt) and Δz = ∫∫ dW ds over one step, per noise channel.
struct BrownianIncrementPair {
    Vector dw;
    Vector dz;
};

/// Draws (Δw, Δz) with E[Δw²]=Δt, E[Δz²]=Δt³/3, E[ΔwΔz]=Δt²/2 from two
/// independent standard normals: Δw = √Δt·U₁, Δz = ½Δt^{3/2}(U₁ + U₂/√3).
class BrownianSource {
public:
    explicit BrownianSource(std::uint64_t seed) : rng_(seed) {}

    BrownianIncrementPair next(Eigen::Index channels, double dt) {
        BrownianIncrementPair inc{Vector(channels), Vector(channels)};
        const double sq = std::sqrt(dt);
        const double c = 0.5 * dt * sq;
        for (Eigen::Index j = 0; j < channels; ++j) {
            const double u1 = normal_(rng_);
            const double u2 = normal_(rng_);
            inc.dw(j) = sq * u1;
            inc.dz(j) = c * (u1 + u2 / std::sqrt(3.0));
        }
        return inc;
    }

    double standard_normal() { return normal_(rng_); }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

namespace detail {

inline void check_state(const Vector& y, const char* where) {
    if (!y.allFinite()) {
        throw NumericFailure(std::string(where) + ": non-finite state");
    }
}

}  // namespace detail

/// y + a Δt + b Δw.
inline Vector em_step(const StateSpaceModel& model, const Vector& y, const Vector& u, const Vector& dw,
                      double dt) {
    require(y.size() == model.dim && dw.size() == model.noise_dim, "em_step: dimension mismatch");
    detail::check_state(y, "em_step");
    Vector next = y + model.drift(y, u) * dt + model.dispersion(y) * dw;
    detail::check_state(next, "em_step");
    return next;
}

/// One Taylor 1.5 strong step:
///   y + aΔt + bΔw + Σ_j [½ L^j b_j (Δw_j² − Δt) + L^j a Δz_j + L⁰ b_j (Δw_j Δt − Δz_j)] + ½ L⁰a Δt²
/// with L⁰ = ∂_t + Σ a_i ∂_i + ½ Σ (bbᵀ)_ij ∂_i∂_j and L^j = Σ_k b_kj ∂_k.
/// `u_rate` is du/dt at the step start; pass an empty vector when the input is constant.
inline Vector taylor15_step(const StateSpaceModel& model, const Vector& y, const Vector& u,
                            const BrownianIncrementPair& inc, double dt, const Vector& u_rate = Vector()) {
    require(y.size() == model.dim && inc.dw.size() == model.noise_dim && inc.dz.size() == model.noise_dim,
            "taylor15_step: dimension mismatch");
    detail::check_state(y, "taylor15_step");

    const Vector a = model.drift(y, u);
    const Matrix b = model.dispersion(y);
    const Matrix jac = model.drift_jacobian(y);
    const Matrix bbt = b * b.transpose();

    Vector l0a = jac * a;
    if (model.drift_hessian_contract) l0a += 0.5 * model.drift_hessian_contract(y, bbt);
    if (model.drift_input_rate && u_rate.size() > 0) l0a += model.drift_input_rate(y, u_rate);

    const Matrix lja = jac * b;  // column j = L^j a

    Vector next = y + a * dt + b * inc.dw + lja * inc.dz + 0.5 * l0a * dt * dt;

    // Additive noise: L^j b and L⁰ b vanish.
    if (!model.additive_noise()) {
        const std::vector<Matrix> db = model.dispersion_jacobian(y);
        for (Eigen::Index j = 0; j < model.noise_dim; ++j) {
            const Matrix& dbj = db[static_cast<std::size_t>(j)];
            // b is affine in y for the supported models, so ∂²b = 0 in L⁰ b.
            const Vector ljb = dbj * b.col(j);
            const Vector l0b = dbj * a;
            next += 0.5 * ljb * (inc.dw(j) * inc.dw(j) - dt) + l0b * (inc.dw(j) * dt - inc.dz(j));
        }
    }
    detail::check_state(next, "taylor15_step");
    return next;
}

/// Sampled fast-time response of one window.
struct Trajectory {
    std::vector<double> times;
    std::vector<Vector> states;
    std::vector<Vector> accelerations;  // −M⁻¹(G + Kx + Cẋ), all DOFs
    std::vector<Vector> forces;         // deterministic force samples

    std::size_t size() const { return times.size(); }
};

/// Number of samples on [0, duration] at spacing dt (both endpoints included).
inline std::size_t sample_count(double duration, double dt) {
    require(dt > 0.0, "dt must be positive");
    require(duration >= dt, "duration must be at least one step");
    return static_cast<std::size_t>(std::llround(duration / dt)) + 1;
}

/// Integrate `model` (built from `system`) from y0 over [0, duration].
/// `t0` offsets the force phase.
inline Trajectory simulate_window(const StateSpaceModel& model, const MdofSystem& system, const Vector& y0,
                                  double duration, const IntegratorConfig& cfg, double t0 = 0.0) {
    require(y0.size() == model.dim, "simulate_window: initial state has wrong dimension");
    const std::size_t n = sample_count(duration, cfg.dt);
    BrownianSource brownian(cfg.seed);

    Trajectory traj;
    traj.times.reserve(n);
    traj.states.reserve(n);
    traj.accelerations.reserve(n);
    traj.forces.reserve(n);

    Vector y = y0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = t0 + static_cast<double>(k) * cfg.dt;
        const Vector u = system.force_at(t);
        traj.times.push_back(static_cast<double>(k) * cfg.dt);
        traj.states.push_back(y);
        traj.accelerations.push_back(model.acceleration(y));
        traj.forces.push_back(u);
        if (k + 1 == n) break;
        const auto inc = brownian.next(model.noise_dim, cfg.dt);
        try {
            if (cfg.scheme == Scheme::euler_maruyama) {
                y = em_step(model, y, u, inc.dw, cfg.dt);
            } else {
                y = taylor15_step(model, y, u, inc, cfg.dt, system.force_rate_at(t));
            }
        } catch (const NumericFailure& e) {
            throw NumericFailure(std::string(e.what()) + " at sample " + std::to_string(k));
        }
    }
    return traj;
}

/// Integrate `model` driven by a sampled input held constant over each step
/// (`input` has one row per output sample, one column per DOF).
inline Trajectory simulate_with_input(const StateSpaceModel& model, const Vector& y0, const Matrix& input,
                                      const IntegratorConfig& cfg) {
    require(y0.size() == model.dim, "simulate_with_input: initial state has wrong dimension");
    require(input.rows() >= 2 && input.cols() == model.noise_dim, "simulate_with_input: input has wrong shape");
    require(cfg.dt > 0.0, "dt must be positive");
    const auto n = static_cast<std::size_t>(input.rows());
    BrownianSource brownian(cfg.seed);

    Trajectory traj;
    traj.times.reserve(n);
    traj.states.reserve(n);
    traj.accelerations.reserve(n);
    traj.forces.reserve(n);

    Vector y = y0;
    for (std::size_t k = 0; k < n; ++k) {
        const Vector u = input.row(static_cast<Eigen::Index>(k)).transpose();
        traj.times.push_back(static_cast<double>(k) * cfg.dt);
        traj.states.push_back(y);
        traj.accelerations.push_back(model.acceleration(y));
        traj.forces.push_back(u);
        if (k + 1 == n) break;
        const auto inc = brownian.next(model.noise_dim, cfg.dt);
        try {
            y = cfg.scheme == Scheme::euler_maruyama ? em_step(model, y, u, inc.dw, cfg.dt)
                                                      : taylor15_step(model, y, u, inc, cfg.dt);
        } catch (const NumericFailure& e) {
            throw NumericFailure(std::string(e.what()) + " at sample " + std::to_string(k));
        }
    }
    return traj;
}

/// Add white Gaussian noise per channel with σ_noise = σ_signal/√snr.
/// `signal` holds one sample per row and one channel per column.
inline Matrix corrupt_with_snr(const Matrix& signal, double snr, std::uint64_t seed) {
    require(snr > 0.0, "SNR must be positive");
    require(signal.rows() > 1, "SNR corruption needs at least two samples");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out = signal;
    for (Eigen::Index c = 0; c < signal.cols(); ++c) {
        const auto col = signal.col(c);
        const double mean = col.mean();
        const double var = (col.array() - mean).square().mean();
        if (!(var > 0.0)) {
            throw InvalidParameter("SNR is undefined for a zero-variance channel (" + std::to_string(c) + ")");
        }
        const double sd = std::sqrt(var / snr);
        for (Eigen::Index r = 0; r < signal.rows(); ++r) out(r, c) += sd * normal(rng);
    }
    return out;
}

/// Noise variance per channel implied by `snr` for `signal`.
inline Vector snr_noise_variance(const Matrix& signal, double snr) {
    require(snr > 0.0, "SNR must be positive");
    Vector v(signal.cols());
    for (Eigen::Index c = 0; c < signal.cols(); ++c) {
        const auto col = signal.col(c);
        v(c) = (col.array() - col.mean()).square().mean() / snr;
    }
    return v;
}

/// Stack per-sample vectors row-wise.
inline Matrix stack_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) return {};
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return m;
}

}  // namespace dtwin

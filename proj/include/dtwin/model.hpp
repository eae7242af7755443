#pragma once

// N-DOF chain systems M ẍ + C ẋ + K x + G(x) = F + Σ Ẇ and the two benchmark
// builders (2-DOF Duffing, 7-DOF Duffing-van-der-Pol).

#include "dtwin/common.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace dtwin {

/// F_i(t) = amplitude · sin(frequency · t).
struct HarmonicForce {
    double amplitude = 0.0;  // N
    double frequency = 0.0;  // rad/s
};

/// Cubic spring between `dof` and `other` (or ground when `other` is empty).
/// Contributes α·d³ to G[dof] and −α·d³ to G[other], d = x[dof] − x[other].
struct CubicSpring {
    std::size_t dof = 0;
    std::optional<std::size_t> other;
};

/// How the linear stiffness and damping matrices are assembled from the
/// element values.
enum class Assembly {
    chain,    ///< standard fixed-base chain, symmetric tri-diagonal
    printed,  ///< 7-DOF matrices with the published sign pattern
};

/// Ordering of displacements and velocities in the state vector.
enum class StateLayout {
    blocked,      ///< [x_1..x_N, ẋ_1..ẋ_N]
    interleaved,  ///< [x_1, ẋ_1, x_2, ẋ_2, ...]
};

/// A matrix that is linear in a vector of element values: A(v) = Σ_j v_j E_j.
struct LinearElementSet {
    Vector values;
    std::vector<Matrix> basis;

    Matrix assemble(const Eigen::Ref<const Vector>& v) const {
        const auto n = basis.empty() ? 0 : basis.front().rows();
        Matrix out = Matrix::Zero(n, n);
        for (std::size_t j = 0; j < basis.size(); ++j) {
            out += v(static_cast<Eigen::Index>(j)) * basis[j];
        }
        return out;
    }
    Matrix assemble() const { return assemble(values); }
};

namespace detail {

inline std::vector<Matrix> chain_basis(std::size_t n) {
    std::vector<Matrix> basis;
    const auto N = static_cast<Eigen::Index>(n);
    for (Eigen::Index j = 0; j < N; ++j) {
        Matrix e = Matrix::Zero(N, N);
        e(j, j) += 1.0;
        if (j > 0) {
            e(j - 1, j - 1) += 1.0;
            e(j - 1, j) -= 1.0;
            e(j, j - 1) -= 1.0;
        }
        basis.push_back(std::move(e));
    }
    return basis;
}

// 7-DOF stiffness as printed: the element between DOF 3 and 4 enters with
// reversed sign and the last row couples to DOF 6 through k_6.
inline std::vector<Matrix> printed_stiffness_basis() {
    auto basis = chain_basis(7);
    basis[3] *= -1.0;
    basis[5](6, 5) = -1.0;
    basis[6](6, 5) = 0.0;
    return basis;
}

// 7-DOF damping as printed: chain, except the last row couples through c_6.
inline std::vector<Matrix> printed_damping_basis() {
    auto basis = chain_basis(7);
    basis[5](6, 5) = -1.0;
    basis[6](6, 5) = 0.0;
    return basis;
}

}  // namespace detail

/// Mass/damping/stiffness description of an N-DOF stochastic nonlinear system.
struct MdofSystem {
    std::string name;
    Vector mass;                 // diagonal of M (kg)
    LinearElementSet damping;    // element values c_i (N·s/m)
    LinearElementSet stiffness;  // element values k_i (N/m)
    double nonlinear_coeff = 0.0;  // α (N/m³)
    std::vector<CubicSpring> cubic_springs;
    std::vector<HarmonicForce> force;
    Vector noise_sigma;  // diagonal of Σ (N)
    /// Per noise channel, the DOF whose displacement multiplies that channel's
    /// intensity (state-dependent dispersion); empty means additive.
    std::vector<std::optional<std::size_t>> noise_multiplier;
    std::vector<std::size_t> frozen_stiffness;  // indices kept constant in slow time
    Assembly assembly = Assembly::chain;
    StateLayout layout = StateLayout::blocked;

    std::size_t n_dof() const { return static_cast<std::size_t>(mass.size()); }
    std::size_t n_stiffness() const { return static_cast<std::size_t>(stiffness.values.size()); }

    Matrix mass_matrix() const { return mass.asDiagonal(); }
    Matrix damping_matrix() const { return damping.assemble(); }
    Matrix stiffness_matrix() const { return stiffness.assemble(); }
    Matrix stiffness_matrix(const Eigen::Ref<const Vector>& k) const { return stiffness.assemble(k); }

    /// G(x).
    Vector nonlinear_force(const Eigen::Ref<const Vector>& x) const {
        Vector g = Vector::Zero(x.size());
        for (const auto& s : cubic_springs) {
            const double d = spring_extension(s, x);
            const double f = nonlinear_coeff * d * d * d;
            g(idx(s.dof)) += f;
            if (s.other) g(idx(*s.other)) -= f;
        }
        return g;
    }

    /// ∂G/∂x.
    Matrix nonlinear_jacobian(const Eigen::Ref<const Vector>& x) const {
        const auto n = x.size();
        Matrix jac = Matrix::Zero(n, n);
        for (const auto& s : cubic_springs) {
            const double d = spring_extension(s, x);
            const double slope = 3.0 * nonlinear_coeff * d * d;
            const auto a = idx(s.dof);
            jac(a, a) += slope;
            if (s.other) {
                const auto b = idx(*s.other);
                jac(a, b) -= slope;
                jac(b, a) -= slope;
                jac(b, b) += slope;
            }
        }
        return jac;
    }

    /// r_i = Σ_pq S_pq ∂²G_i/∂x_p∂x_q for a displacement-block weight S.
    Vector nonlinear_hessian_contract(const Eigen::Ref<const Vector>& x,
                                      const Eigen::Ref<const Matrix>& s_xx) const {
        Vector r = Vector::Zero(x.size());
        for (const auto& s : cubic_springs) {
            const double d = spring_extension(s, x);
            const auto a = idx(s.dof);
            double quad = s_xx(a, a);
            if (s.other) {
                const auto b = idx(*s.other);
                quad += s_xx(b, b) - s_xx(a, b) - s_xx(b, a);
            }
            const double v = 6.0 * nonlinear_coeff * d * quad;
            r(a) += v;
            if (s.other) r(idx(*s.other)) -= v;
        }
        return r;
    }

    Vector force_at(double t) const {
        Vector f(static_cast<Eigen::Index>(force.size()));
        for (std::size_t i = 0; i < force.size(); ++i) {
            f(idx(i)) = force[i].amplitude * std::sin(force[i].frequency * t);
        }
        return f;
    }

    /// dF/dt.
    Vector force_rate_at(double t) const {
        Vector f(static_cast<Eigen::Index>(force.size()));
        for (std::size_t i = 0; i < force.size(); ++i) {
            const auto& h = force[i];
            f(idx(i)) = h.amplitude * h.frequency * std::cos(h.frequency * t);
        }
        return f;
    }

    MdofSystem with_stiffness(const Eigen::Ref<const Vector>& k) const {
        require(k.size() == stiffness.values.size(), "stiffness vector has wrong length");
        MdofSystem out = *this;
        out.stiffness.values = k;
        return out;
    }

    bool is_frozen(std::size_t j) const {
        return std::find(frozen_stiffness.begin(), frozen_stiffness.end(), j) != frozen_stiffness.end();
    }

    /// Throws InvalidParameter when a structural invariant is violated.
    void validate() const {
        const auto n = mass.size();
        require(n > 0, "system must have at least one DOF");
        require((mass.array() > 0.0).all(), "masses must be strictly positive");
        require((stiffness.values.array() > 0.0).all(), "stiffness values must be strictly positive");
        require((damping.values.array() >= 0.0).all(), "damping values must be non-negative");
        require(stiffness.values.size() == n && damping.values.size() == n,
                "stiffness and damping need one value per DOF");
        require(stiffness.basis.size() == static_cast<std::size_t>(n) &&
                    damping.basis.size() == static_cast<std::size_t>(n),
                "element basis size mismatch");
        require(noise_sigma.size() == n, "noise intensity needs one value per DOF");
        require((noise_sigma.array() >= 0.0).all(), "noise intensities must be non-negative");
        require(force.size() == static_cast<std::size_t>(n), "force needs one descriptor per DOF");
        require(noise_multiplier.size() == static_cast<std::size_t>(n),
                "noise multiplier needs one entry per DOF");
        require(nonlinear_coeff >= 0.0, "nonlinear coefficient must be non-negative");
        for (const auto& s : cubic_springs) {
            require(s.dof < static_cast<std::size_t>(n) &&
                        (!s.other || *s.other < static_cast<std::size_t>(n)),
                    "cubic spring references an unknown DOF");
        }
        for (const auto& m : noise_multiplier) {
            require(!m || *m < static_cast<std::size_t>(n), "noise multiplier references an unknown DOF");
        }
        for (auto j : frozen_stiffness) {
            require(j < static_cast<std::size_t>(n), "frozen stiffness index out of range");
        }
    }

private:
    static Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }

    static double spring_extension(const CubicSpring& s, const Eigen::Ref<const Vector>& x) {
        return x(idx(s.dof)) - (s.other ? x(idx(*s.other)) : 0.0);
    }
};

/// Table values of the 2-DOF Duffing benchmark.
struct DuffingParams {
    double m1 = 20.0, m2 = 10.0;
    double k1 = 1000.0, k2 = 500.0;
    double c1 = 10.0, c2 = 5.0;
    double lambda1 = 10.0, lambda2 = 10.0;
    double omega1 = 10.0, omega2 = 10.0;
    double sigma1 = 0.1, sigma2 = 0.1;
    double alpha = 100.0;
};

/// Table values of the 7-DOF Duffing-van-der-Pol benchmark.
struct DvpParams {
    std::vector<double> mass{20, 20, 10, 10, 10, 10, 5};
    std::vector<double> stiffness{2000, 2000, 1000, 1000, 1000, 1000, 500};
    std::vector<double> damping{20, 20, 20, 20, 20, 20, 20};
    double lambda = 10.0;
    double omega = 10.0;
    double sigma = 0.1;
    double alpha = 100.0;
    Assembly assembly = Assembly::chain;
};

/// 2-DOF chain with a Duffing spring to ground at DOF 1.
inline MdofSystem build_duffing_2dof(const DuffingParams& p = {}) {
    for (double v : {p.m1, p.m2, p.k1, p.k2}) {
        require(v > 0.0, "2-DOF masses and stiffnesses must be positive");
    }
    for (double v : {p.c1, p.c2, p.alpha, p.sigma1, p.sigma2}) {
        require(v >= 0.0, "2-DOF damping, noise and nonlinear coefficient must be non-negative");
    }
    MdofSystem s;
    s.name = "duffing_2dof";
    s.mass = Eigen::Vector2d(p.m1, p.m2);
    s.stiffness = {Eigen::Vector2d(p.k1, p.k2), detail::chain_basis(2)};
    s.damping = {Eigen::Vector2d(p.c1, p.c2), detail::chain_basis(2)};
    s.nonlinear_coeff = p.alpha;
    s.cubic_springs = {CubicSpring{0, std::nullopt}};
    s.force = {{p.lambda1, p.omega1}, {p.lambda2, p.omega2}};
    s.noise_sigma = Eigen::Vector2d(p.sigma1, p.sigma2);
    s.noise_multiplier.assign(2, std::nullopt);
    s.layout = StateLayout::blocked;
    s.validate();
    return s;
}

/// 7-DOF chain with a cubic (Duffing-van-der-Pol) spring between DOF 3 and 4,
/// state-dependent noise at DOF 4 and k_4 held constant in slow time.
inline MdofSystem build_dvp_7dof(const DvpParams& p = {}) {
    require(p.mass.size() == 7 && p.stiffness.size() == 7 && p.damping.size() == 7,
            "7-DOF builder needs seven masses, stiffnesses and dampings");
    for (std::size_t i = 0; i < 7; ++i) {
        require(p.mass[i] > 0.0 && p.stiffness[i] > 0.0,
                "7-DOF masses and stiffnesses must be positive");
        require(p.damping[i] >= 0.0, "7-DOF damping must be non-negative");
    }
    require(p.alpha >= 0.0 && p.sigma >= 0.0, "7-DOF noise and nonlinear coefficient must be non-negative");
    MdofSystem s;
    s.name = "dvp_7dof";
    s.mass = from_std(p.mass);
    const bool printed = p.assembly == Assembly::printed;
    s.stiffness = {from_std(p.stiffness),
                   printed ? detail::printed_stiffness_basis() : detail::chain_basis(7)};
    s.damping = {from_std(p.damping),
                 printed ? detail::printed_damping_basis() : detail::chain_basis(7)};
    s.nonlinear_coeff = p.alpha;
    s.cubic_springs = {CubicSpring{2, std::size_t{3}}};
    s.force.assign(7, HarmonicForce{p.lambda, p.omega});
    s.noise_sigma = Vector::Constant(7, p.sigma);
    s.noise_multiplier.assign(7, std::nullopt);
    s.noise_multiplier[3] = std::size_t{3};
    s.frozen_stiffness = {3};
    s.assembly = p.assembly;
    s.layout = StateLayout::interleaved;
    s.validate();
    return s;
}

/// Slow-time stiffness decay k_i(t_s) = k0_i · exp(−rate · t_s).
struct DegradationSchedule {
    Vector k0;
    double rate = 0.5e-4;  // 1/day
    std::vector<std::size_t> frozen;

    static DegradationSchedule for_system(const MdofSystem& sys, double rate = 0.5e-4) {
        return {sys.stiffness.values, rate, sys.frozen_stiffness};
    }

    double delta(double t_s) const {
        require(t_s >= 0.0, "slow time must be non-negative");
        return std::exp(-rate * t_s);
    }
};

inline Vector degraded_stiffness(const DegradationSchedule& schedule, double t_s) {
    require(schedule.rate >= 0.0, "degradation rate must be non-negative");
    const double d = schedule.delta(t_s);
    Vector k = schedule.k0;
    for (Eigen::Index i = 0; i < k.size(); ++i) {
        const bool frozen = std::find(schedule.frozen.begin(), schedule.frozen.end(),
                                      static_cast<std::size_t>(i)) != schedule.frozen.end();
        if (!frozen) k(i) *= d;
    }
    return k;
}

}  // namespace dtwin

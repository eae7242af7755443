#pragma once

// Itô form dy = a(y, u) dt + b(y) dW of an MdofSystem, optionally augmented
// with stiffness parameters as zero-drift states.

#include "dtwin/common.hpp"
#include "dtwin/model.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dtwin {

struct StateLabel {
    enum class Kind { displacement, velocity, parameter, other };
    Kind kind = Kind::other;
    std::size_t index = 0;  // DOF or stiffness element index
    std::string name;
};

/// Position of each semantic quantity inside the state vector.
struct StateIndexMap {
    std::vector<Eigen::Index> displacement;
    std::vector<Eigen::Index> velocity;
    std::vector<std::size_t> parameters;   // stiffness element indices carried in the state
    std::vector<Eigen::Index> parameter;   // their positions

    static StateIndexMap make(std::size_t n_dof, StateLayout layout,
                              const std::vector<std::size_t>& augmented) {
        StateIndexMap m;
        const auto n = static_cast<Eigen::Index>(n_dof);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (layout == StateLayout::blocked) {
                m.displacement.push_back(i);
                m.velocity.push_back(n + i);
            } else {
                m.displacement.push_back(2 * i);
                m.velocity.push_back(2 * i + 1);
            }
        }
        m.parameters = augmented;
        for (std::size_t j = 0; j < augmented.size(); ++j) {
            m.parameter.push_back(2 * n + static_cast<Eigen::Index>(j));
        }
        return m;
    }

    Eigen::Index dim() const {
        return static_cast<Eigen::Index>(displacement.size() + velocity.size() + parameter.size());
    }
};

/// Drift, dispersion and the analytic derivatives the Taylor-1.5 scheme needs.
/// Empty optional callbacks mean the corresponding derivative is identically zero.
struct StateSpaceModel {
    using DriftFn = std::function<Vector(const Vector& y, const Vector& u)>;
    using DriftJacobianFn = std::function<Matrix(const Vector& y)>;
    using HessianContractFn = std::function<Vector(const Vector& y, const Matrix& weight)>;
    using DispersionFn = std::function<Matrix(const Vector& y)>;
    using DispersionJacobianFn = std::function<std::vector<Matrix>(const Vector& y)>;
    using InputRateFn = std::function<Vector(const Vector& y, const Vector& u_rate)>;

    Eigen::Index dim = 0;
    Eigen::Index noise_dim = 0;
    DriftFn drift;
    DriftJacobianFn drift_jacobian;
    HessianContractFn drift_hessian_contract;     // Σ_ij W_ij ∂i∂j a
    DispersionFn dispersion;
    DispersionJacobianFn dispersion_jacobian;     // per channel j: ∂b_{·j}/∂y
    InputRateFn drift_input_rate;                 // ∂a/∂t through the input u(t)
    std::vector<StateLabel> labels;

    std::shared_ptr<const MdofSystem> system;
    StateIndexMap index;

    /// True when b does not depend on the state.
    bool additive_noise() const { return !dispersion_jacobian; }

    /// Stiffness element values implied by state y (nominal for non-augmented entries).
    Vector stiffness(const Eigen::Ref<const Vector>& y) const {
        Vector k = system->stiffness.values;
        for (std::size_t j = 0; j < index.parameters.size(); ++j) {
            k(static_cast<Eigen::Index>(index.parameters[j])) = y(index.parameter[j]);
        }
        return k;
    }

    Vector displacement(const Eigen::Ref<const Vector>& y) const { return gather(y, index.displacement); }
    Vector velocity(const Eigen::Ref<const Vector>& y) const { return gather(y, index.velocity); }

    /// Restoring-force acceleration −M⁻¹(G + Kx + Cẋ) for every DOF.
    Vector acceleration(const Eigen::Ref<const Vector>& y) const {
        const Vector x = displacement(y);
        const Vector v = velocity(y);
        const Vector rest = system->nonlinear_force(x) + system->stiffness_matrix(stiffness(y)) * x +
                            system->damping_matrix() * v;
        return -(rest.array() / system->mass.array()).matrix();
    }

    /// Build the state vector from displacements, velocities and carried parameters.
    Vector compose(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& v,
                   const Eigen::Ref<const Vector>& params = Vector()) const {
        Vector y = Vector::Zero(dim);
        for (std::size_t i = 0; i < index.displacement.size(); ++i) {
            y(index.displacement[i]) = x(static_cast<Eigen::Index>(i));
            y(index.velocity[i]) = v(static_cast<Eigen::Index>(i));
        }
        for (std::size_t j = 0; j < index.parameter.size(); ++j) {
            y(index.parameter[j]) = params(static_cast<Eigen::Index>(j));
        }
        return y;
    }

private:
    static Vector gather(const Eigen::Ref<const Vector>& y, const std::vector<Eigen::Index>& at) {
        Vector out(static_cast<Eigen::Index>(at.size()));
        for (std::size_t i = 0; i < at.size(); ++i) out(static_cast<Eigen::Index>(i)) = y(at[i]);
        return out;
    }
};

/// Convert a system to its Itô state-space form. Stiffness elements listed in
/// `augment_params` are appended to the state with zero drift and zero dispersion.
inline StateSpaceModel to_state_space(const MdofSystem& system,
                                      const std::vector<std::size_t>& augment_params = {},
                                      std::optional<StateLayout> layout = std::nullopt) {
    system.validate();
    for (std::size_t j = 0; j < augment_params.size(); ++j) {
        require(augment_params[j] < system.n_stiffness(), "augmented parameter index out of range");
        for (std::size_t i = 0; i < j; ++i) {
            require(augment_params[i] != augment_params[j], "augmented parameter listed twice");
        }
    }

    auto sys = std::make_shared<const MdofSystem>(system);
    StateSpaceModel m;
    m.system = sys;
    m.index = StateIndexMap::make(system.n_dof(), layout.value_or(system.layout), augment_params);
    m.dim = m.index.dim();
    m.noise_dim = static_cast<Eigen::Index>(system.n_dof());

    m.labels.resize(static_cast<std::size_t>(m.dim));
    for (std::size_t i = 0; i < system.n_dof(); ++i) {
        m.labels[static_cast<std::size_t>(m.index.displacement[i])] = {
            StateLabel::Kind::displacement, i, "x" + std::to_string(i + 1)};
        m.labels[static_cast<std::size_t>(m.index.velocity[i])] = {
            StateLabel::Kind::velocity, i, "v" + std::to_string(i + 1)};
    }
    for (std::size_t j = 0; j < augment_params.size(); ++j) {
        m.labels[static_cast<std::size_t>(m.index.parameter[j])] = {
            StateLabel::Kind::parameter, augment_params[j], "k" + std::to_string(augment_params[j] + 1)};
    }

    const StateSpaceModel view = m;  // index helpers only, no callbacks
    const StateIndexMap idx = m.index;
    const Eigen::Index dim = m.dim;
    const Matrix damping = sys->damping_matrix();
    const Vector inv_mass = sys->mass.cwiseInverse();
    const auto n = static_cast<Eigen::Index>(sys->n_dof());

    // a(y,u): velocity pass-through, M⁻¹(u − Cẋ − K(k)x − G(x)), zero for parameters.
    m.drift = [sys, idx, dim, damping, inv_mass, n, mm = view](const Vector& y, const Vector& u) {
        const Vector x = mm.displacement(y);
        const Vector v = mm.velocity(y);
        const Matrix stiff = sys->stiffness_matrix(mm.stiffness(y));
        Vector acc = u - damping * v - stiff * x - sys->nonlinear_force(x);
        acc.array() *= inv_mass.array();
        Vector a = Vector::Zero(dim);
        for (Eigen::Index i = 0; i < n; ++i) {
            a(idx.displacement[static_cast<std::size_t>(i)]) = v(i);
            a(idx.velocity[static_cast<std::size_t>(i)]) = acc(i);
        }
        return a;
    };

    m.drift_jacobian = [sys, idx, dim, damping, inv_mass, n, mm = view](const Vector& y) {
        const Vector x = mm.displacement(y);
        const Vector k = mm.stiffness(y);
        const Matrix dx = -(inv_mass.asDiagonal() * (sys->stiffness_matrix(k) + sys->nonlinear_jacobian(x)));
        const Matrix dv = -(inv_mass.asDiagonal() * damping);
        Matrix jac = Matrix::Zero(dim, dim);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto r = idx.velocity[static_cast<std::size_t>(i)];
            jac(idx.displacement[static_cast<std::size_t>(i)], r) = 1.0;
            for (Eigen::Index p = 0; p < n; ++p) {
                jac(r, idx.displacement[static_cast<std::size_t>(p)]) = dx(i, p);
                jac(r, idx.velocity[static_cast<std::size_t>(p)]) = dv(i, p);
            }
            for (std::size_t j = 0; j < idx.parameters.size(); ++j) {
                const Matrix& e = sys->stiffness.basis[idx.parameters[j]];
                jac(r, idx.parameter[j]) = -inv_mass(i) * e.row(i).dot(x);
            }
        }
        return jac;
    };

    // Only G(x) (displacement-displacement) and K(k)x (displacement-parameter)
    // have non-zero second derivatives.
    m.drift_hessian_contract = [sys, idx, dim, inv_mass, n, mm = view](const Vector& y, const Matrix& w) {
        const Vector x = mm.displacement(y);
        Matrix w_xx(n, n);
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = 0; q < n; ++q) {
                w_xx(p, q) = w(idx.displacement[static_cast<std::size_t>(p)],
                               idx.displacement[static_cast<std::size_t>(q)]);
            }
        }
        Vector second = sys->nonlinear_hessian_contract(x, w_xx);
        for (std::size_t j = 0; j < idx.parameters.size(); ++j) {
            const Matrix& e = sys->stiffness.basis[idx.parameters[j]];
            const auto pk = idx.parameter[j];
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index p = 0; p < n; ++p) {
                    const auto px = idx.displacement[static_cast<std::size_t>(p)];
                    second(i) += e(i, p) * (w(px, pk) + w(pk, px));
                }
            }
        }
        Vector out = Vector::Zero(dim);
        for (Eigen::Index i = 0; i < n; ++i) {
            out(idx.velocity[static_cast<std::size_t>(i)]) = -inv_mass(i) * second(i);
        }
        return out;
    };

    m.drift_input_rate = [idx, dim, inv_mass, n](const Vector&, const Vector& u_rate) {
        Vector out = Vector::Zero(dim);
        for (Eigen::Index i = 0; i < n; ++i) {
            out(idx.velocity[static_cast<std::size_t>(i)]) = inv_mass(i) * u_rate(i);
        }
        return out;
    };

    const Vector sigma_over_m = sys->noise_sigma.cwiseProduct(inv_mass);
    const auto multipliers = sys->noise_multiplier;
    m.dispersion = [idx, dim, n, sigma_over_m, multipliers](const Vector& y) {
        Matrix b = Matrix::Zero(dim, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& mult = multipliers[static_cast<std::size_t>(i)];
            const double scale = mult ? y(idx.displacement[*mult]) : 1.0;
            b(idx.velocity[static_cast<std::size_t>(i)], i) = sigma_over_m(i) * scale;
        }
        return b;
    };

    const bool state_dependent =
        std::any_of(multipliers.begin(), multipliers.end(), [](const auto& o) { return o.has_value(); });
    if (state_dependent) {
        m.dispersion_jacobian = [idx, dim, n, sigma_over_m, multipliers](const Vector&) {
            std::vector<Matrix> out(static_cast<std::size_t>(n), Matrix::Zero(dim, dim));
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto& mult = multipliers[static_cast<std::size_t>(i)];
                if (mult) {
                    out[static_cast<std::size_t>(i)](idx.velocity[static_cast<std::size_t>(i)],
                                                     idx.displacement[*mult]) = sigma_over_m(i);
                }
            }
            return out;
        };
    }
    return m;
}

/// Measurement function y ↦ selected rows of −M⁻¹(G + Kx + Cẋ).
/// The deterministic force is not part of the measured acceleration.
inline std::function<Vector(const Vector&)> acceleration_model(const StateSpaceModel& model,
                                                               const std::vector<std::size_t>& observed_dofs) {
    require(model.system != nullptr, "acceleration model needs an MDOF-backed state-space model");
    require(!observed_dofs.empty(), "at least one DOF must be observed");
    for (auto d : observed_dofs) {
        require(d < model.system->n_dof(), "observed DOF out of range");
    }
    return [model, observed_dofs](const Vector& y) {
        const Vector all = model.acceleration(y);
        Vector out(static_cast<Eigen::Index>(observed_dofs.size()));
        for (std::size_t i = 0; i < observed_dofs.size(); ++i) {
            out(static_cast<Eigen::Index>(i)) = all(static_cast<Eigen::Index>(observed_dofs[i]));
        }
        return out;
    };
}

inline std::function<Vector(const Vector&)> acceleration_model(const MdofSystem& system,
                                                               const std::vector<std::size_t>& observed_dofs) {
    return acceleration_model(to_state_space(system), observed_dofs);
}

}  // namespace dtwin

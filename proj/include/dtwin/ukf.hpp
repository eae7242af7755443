#pragma once

// Unscented Kalman filter for joint state-parameter estimation.

#include "dtwin/common.hpp"
#include "dtwin/state_space.hpp"
#include "dtwin/window.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

namespace dtwin {

/// Scaling parameters of the scaled unscented transform.
struct UkfParams {
    double alpha = 1e-3;
    double beta = 2.0;
    double kappa = 0.0;

    double lambda(Eigen::Index dim) const {
        const auto l = static_cast<double>(dim);
        return alpha * alpha * (l + kappa) - l;
    }

    void validate(Eigen::Index dim) const {
        require(alpha > 0.0 && alpha <= 1.0, "UKF alpha must lie in (0, 1]");
        require(static_cast<double>(dim) + lambda(dim) > 0.0, "UKF requires L + lambda > 0");
    }
};

struct GaussianBelief {
    Vector mean;
    Matrix cov;

    Eigen::Index dim() const { return mean.size(); }
    Vector stddev() const { return cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

/// Counters for covariance conditioning performed during a run.
struct RepairStats {
    std::size_t psd_repairs = 0;      // eigenvalue clips
    std::size_t jitter_events = 0;    // Cholesky retries with diagonal loading
    double max_repair_ratio = 0.0;    // max clipped mass / trace

    void merge(const RepairStats& o) {
        psd_repairs += o.psd_repairs;
        jitter_events += o.jitter_events;
        max_repair_ratio = std::max(max_repair_ratio, o.max_repair_ratio);
    }
};

/// Lower Cholesky factor of P. On failure the diagonal is loaded with
/// ε·(diag(P) + 1e-300) for ε = 1e-12, 1e-11, ..., 1e-6.
inline Matrix robust_cholesky(const Matrix& p, RepairStats* stats = nullptr) {
    Eigen::LLT<Matrix> llt(p);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    const Vector load = p.diagonal().cwiseAbs().array() + 1e-300;
    for (double eps = 1e-12; eps <= 1.000001e-6; eps *= 10.0) {
        Matrix q = p;
        q.diagonal() += eps * load;
        llt.compute(q);
        if (llt.info() == Eigen::Success) {
            if (stats) ++stats->jitter_events;
            return llt.matrixL();
        }
    }
    throw NumericFailure("matrix square root failed after maximum jitter");
}

/// Symmetrize and, if P is not positive semi-definite, clip its negative
/// eigenvalues to zero.
inline void repair_covariance(Matrix& p, RepairStats& stats) {
    symmetrize(p);
    if (!p.allFinite()) throw NumericFailure("non-finite covariance");
    Eigen::LLT<Matrix> llt(p);
    if (llt.info() == Eigen::Success) return;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(p);
    Vector values = eig.eigenvalues();
    if (values.minCoeff() >= 0.0) return;
    const double clipped = (-values.array()).max(0.0).sum();
    values = values.cwiseMax(0.0);
    p = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
    symmetrize(p);
    ++stats.psd_repairs;
    const double trace = std::max(p.trace(), 1e-300);
    stats.max_repair_ratio = std::max(stats.max_repair_ratio, clipped / trace);
}

/// 2L+1 sigma points (columns) with mean and covariance weights.
struct SigmaPointSet {
    Matrix points;
    Vector w_mean;
    Vector w_cov;
    double spread = 0.0;      // √(L + λ)
    double cov_offset = 0.0;  // W_c⁰ − W_m⁰ = 1 − α² + β

    Eigen::Index count() const { return points.cols(); }
};

inline SigmaPointSet sigma_points(const GaussianBelief& belief, const UkfParams& params,
                                  RepairStats* stats = nullptr) {
    const Eigen::Index l = belief.dim();
    require(belief.cov.rows() == l && belief.cov.cols() == l, "belief covariance has wrong shape");
    params.validate(l);
    const double scale = params.alpha * params.alpha * (static_cast<double>(l) + params.kappa);  // L + λ

    // Off-centre weight 1/(2(L+λ)) rounded to a 41-bit mantissa; all partial
    // weight sums are exact. Spread from the rounded weight: 2·W·spread² = 1.
    double w = 1.0 / (2.0 * scale);
    int exponent = 0;
    std::frexp(w, &exponent);
    const double quantum = std::ldexp(1.0, exponent - 41);
    w = std::round(w / quantum) * quantum;

    SigmaPointSet sp;
    sp.spread = std::sqrt(1.0 / (2.0 * w));
    const Matrix root = robust_cholesky(belief.cov, stats);
    sp.points.resize(l, 2 * l + 1);
    sp.points.col(0) = belief.mean;
    for (Eigen::Index i = 0; i < l; ++i) {
        sp.points.col(1 + i) = belief.mean + sp.spread * root.col(i);
        sp.points.col(1 + l + i) = belief.mean - sp.spread * root.col(i);
    }
    sp.w_mean = Vector::Constant(2 * l + 1, w);
    sp.w_cov = sp.w_mean;
    sp.cov_offset = 1.0 - params.alpha * params.alpha + params.beta;
    sp.w_mean(0) = 1.0 - 2.0 * static_cast<double>(l) * w;
    sp.w_cov(0) = sp.w_mean(0) + sp.cov_offset;
    return sp;
}

/// Images of a sigma-point set under a map, with their weighted moments.
struct UnscentedMoments {
    Matrix images;     // out_dim × (2L+1)
    Vector mean;
    Matrix cov;        // without additive noise
    Matrix cross;      // Σ W_c (𝒴 − μ)(𝒵 − mean)ᵀ
};

/// Weighted moments of sigma-point images.
///
/// At α = 1e-3 the centre weight λ/(L+λ) is ≈ 1 − 1/α², so the sums are
/// evaluated in an algebraically identical form relative to the centre image Z₀ (d_i = Z_i − Z₀, e = mean − Z₀, γ = W_c⁰ − W_m⁰):
///   mean = Z₀ + Σ_{i≥1} W_i d_i
///   cov  = Σ_{i≥1} W_i d_i d_iᵀ + (γ − 1) e eᵀ
/// which avoids cancellation between the huge negative and positive weights.
template <class Fn>
UnscentedMoments unscented_transform(const SigmaPointSet& sp, Fn&& fn) {
    const Eigen::Index count = sp.count();
    Vector first = fn(Vector(sp.points.col(0)));
    if (!first.allFinite()) throw NumericFailure("non-finite image at sigma point 0");
    Matrix images(first.size(), count);
    images.col(0) = first;
    for (Eigen::Index i = 1; i < count; ++i) {
        Vector z = fn(Vector(sp.points.col(i)));
        if (!z.allFinite() || z.size() != first.size()) {
            throw NumericFailure("non-finite image at sigma point " + std::to_string(i));
        }
        images.col(i) = z;
    }

    const double gamma = sp.cov_offset;
    const Matrix dz = images.rightCols(count - 1).colwise() - images.col(0);
    const Matrix dy = sp.points.rightCols(count - 1).colwise() - sp.points.col(0);
    const Vector w = sp.w_mean.tail(count - 1);

    UnscentedMoments out;
    const Vector ez = dz * w;
    const Vector ey = dy * w;  // zero up to rounding for a symmetric set
    out.mean = images.col(0) + ez;
    out.cov = dz * w.asDiagonal() * dz.transpose() + (gamma - 1.0) * ez * ez.transpose();
    out.cross = dy * w.asDiagonal() * dz.transpose() + (gamma - 1.0) * ey * ez.transpose();
    out.images = std::move(images);
    return out;
}

namespace detail {

template <class Q>
Matrix evaluate_process_noise(const Q& q, const Vector& predicted_mean) {
    if constexpr (std::is_convertible_v<const Q&, Matrix>) {
        return q;
    } else {
        return q(predicted_mean);
    }
}

}  // namespace detail

/// Time update: propagate sigma points through `dynamics`, add Q (a matrix or
/// a function of the predicted mean), symmetrize and repair.
template <class Fn, class Q>
GaussianBelief predict(const GaussianBelief& belief, Fn&& dynamics, const Q& process_noise,
                       const UkfParams& params, RepairStats* stats = nullptr) {
    RepairStats local;
    RepairStats& st = stats ? *stats : local;
    const auto sp = sigma_points(belief, params, &st);
    auto moments = unscented_transform(sp, dynamics);
    require(moments.mean.size() == belief.dim(), "dynamics changed the state dimension");
    GaussianBelief out;
    out.mean = std::move(moments.mean);
    const Matrix q = detail::evaluate_process_noise(process_noise, out.mean);
    require(q.rows() == belief.dim() && q.cols() == belief.dim(), "process noise has wrong shape");
    out.cov = moments.cov + q;
    repair_covariance(out.cov, st);
    return out;
}

/// Measurement update with observation z and noise covariance R.
template <class Fn>
GaussianBelief update(const GaussianBelief& predicted, Fn&& measurement, const Vector& z, const Matrix& r,
                      const UkfParams& params, RepairStats* stats = nullptr) {
    RepairStats local;
    RepairStats& st = stats ? *stats : local;
    const auto sp = sigma_points(predicted, params, &st);
    auto moments = unscented_transform(sp, measurement);
    require(moments.mean.size() == z.size(), "measurement dimension mismatch");
    require(r.rows() == z.size() && r.cols() == z.size(), "measurement noise has wrong shape");

    Matrix s = moments.cov + r;
    symmetrize(s);
    const Matrix s_root = robust_cholesky(s, &st);
    // K = C S⁻¹  ⇔  S Kᵀ = Cᵀ
    const Matrix gain_t = s_root.transpose().triangularView<Eigen::Upper>().solve(
        s_root.triangularView<Eigen::Lower>().solve(moments.cross.transpose()));
    const Matrix gain = gain_t.transpose();

    GaussianBelief out;
    out.mean = predicted.mean + gain * (z - moments.mean);
    out.cov = predicted.cov - gain * s * gain.transpose();
    repair_covariance(out.cov, st);
    return out;
}

/// Scaling applied on top of the EM-derived process noise Q = Δt·b(m)b(m)ᵀ.
struct ProcessNoiseScaling {
    Vector scale;  // per state entry; Q_ij ← Q_ij·s_i·s_j (empty: ones)
    Vector floor;  // added to diag(Q), e.g. a random-walk variance for parameters (empty: zeros)
};

/// Q(m⁻) = q_c q_cᵀ with q_c = √Δt·b(m⁻), then scaled. For the 7-DOF model this
/// makes the DOF-4 velocity entry depend on the predicted x₄.
inline std::function<Matrix(const Vector&)> build_process_noise(const StateSpaceModel& model, double dt,
                                                                const ProcessNoiseScaling& scaling = {}) {
    require(dt > 0.0, "process noise needs dt > 0");
    require(scaling.scale.size() == 0 || scaling.scale.size() == model.dim, "process-noise scale has wrong length");
    require(scaling.floor.size() == 0 || scaling.floor.size() == model.dim, "process-noise floor has wrong length");
    return [model, dt, scaling](const Vector& m) {
        const Matrix qc = std::sqrt(dt) * model.dispersion(m);
        Matrix q = qc * qc.transpose();
        if (scaling.scale.size() > 0) q = q.cwiseProduct(scaling.scale * scaling.scale.transpose());
        if (scaling.floor.size() > 0) q.diagonal() += scaling.floor;
        return q;
    };
}

struct NoiseModel {
    std::function<Matrix(const Vector&)> q;
    Matrix r;
};

/// Discretization of the filter's dynamic model.
enum class FilterDynamics {
    euler,               ///< f(y) = y + a(y)Δt
    euler_second_order,  ///< f(y) = y + a(y)Δt + ½ (∂a/∂y · a) Δt², no Brownian terms
};

inline std::string to_string(FilterDynamics d) {
    return d == FilterDynamics::euler ? "euler" : "euler-second-order";
}

inline FilterDynamics filter_dynamics_from_string(const std::string& s) {
    if (s == "euler") return FilterDynamics::euler;
    if (s == "euler-second-order") return FilterDynamics::euler_second_order;
    throw InvalidParameter("unknown filter dynamics '" + s + "'");
}

/// Per-sample filter output and the terminal parameter estimate.
struct FilterResult {
    std::vector<double> times;
    std::vector<Vector> means;
    std::vector<Vector> stddevs;
    GaussianBelief terminal;
    Vector parameter_mean;
    Matrix parameter_cov;
    std::vector<std::size_t> parameter_indices;  // stiffness element indices
    RepairStats repairs;
};

/// Sequential predict/update over a window with f(y) = y + a(y, u_{k−1})Δt
/// (plus the optional second-order drift term) and h(y) = the acceleration
/// model of the observed DOFs.
inline FilterResult run_filter(const StateSpaceModel& model, const MeasurementWindow& window,
                               const GaussianBelief& init, const NoiseModel& noise, const UkfParams& params,
                               FilterDynamics dynamics_kind = FilterDynamics::euler) {
    window.validate();
    require(init.dim() == model.dim, "initial belief does not match the augmented state dimension");
    require(window.force.cols() == model.noise_dim, "force series must have one column per DOF");
    require(noise.r.rows() == window.accel.cols() && noise.r.cols() == window.accel.cols(),
            "measurement noise does not match observed DOFs");
    const auto h = acceleration_model(model, window.observed_dofs);
    const double dt = window.dt();

    FilterResult res;
    res.parameter_indices = model.index.parameters;
    res.times = window.times;
    res.means.reserve(window.samples());
    res.stddevs.reserve(window.samples());

    GaussianBelief belief = init;
    res.means.push_back(belief.mean);
    res.stddevs.push_back(belief.stddev());

    for (std::size_t k = 1; k < window.samples(); ++k) {
        const Vector u = window.force.row(static_cast<Eigen::Index>(k - 1)).transpose();
        const auto dynamics = [&model, &u, dt, dynamics_kind](const Vector& y) -> Vector {
            const Vector a = model.drift(y, u);
            if (dynamics_kind == FilterDynamics::euler) return y + a * dt;
            return y + a * dt + 0.5 * (model.drift_jacobian(y) * a) * dt * dt;
        };
        const Vector z = window.accel.row(static_cast<Eigen::Index>(k)).transpose();
        try {
            belief = predict(belief, dynamics, noise.q, params, &res.repairs);
            belief = update(belief, h, z, noise.r, params, &res.repairs);
        } catch (const NumericFailure& e) {
            throw NumericFailure(std::string(e.what()) + " (filter sample " + std::to_string(k) + ")");
        }
        res.means.push_back(belief.mean);
        res.stddevs.push_back(belief.stddev());
    }

    res.terminal = belief;
    const auto np = static_cast<Eigen::Index>(model.index.parameter.size());
    res.parameter_mean.resize(np);
    res.parameter_cov.resize(np, np);
    for (Eigen::Index a = 0; a < np; ++a) {
        res.parameter_mean(a) = belief.mean(model.index.parameter[static_cast<std::size_t>(a)]);
        for (Eigen::Index b = 0; b < np; ++b) {
            res.parameter_cov(a, b) = belief.cov(model.index.parameter[static_cast<std::size_t>(a)],
                                                 model.index.parameter[static_cast<std::size_t>(b)]);
        }
    }
    return res;
}

}  // namespace dtwin
